"""
Run-log Buffer Configuration

Centralizes the sections of the run log and their properties, so adding or
renaming a section does not require touching the writers.
"""

DEFAULT_BUFFERS = {
    "progress": {
        "description": "Status lines while chains run (echoed to stderr)",
        "required": True,
        "echo": True,
    },
    "diagnostics": {
        "description": "Meeting times, hole counts and reference-change rates",
        "required": True,
        "echo": False,
    },
    "results": {
        "description": "Oracle references, estimates and fitted parameters",
        "required": True,
        "echo": False,
    },
}

def get_buffer_names():
    """Get list of all buffer names"""
    return list(DEFAULT_BUFFERS.keys())

def is_buffer_echoed(name):
    """Check if a buffer is echoed to standard error"""
    return DEFAULT_BUFFERS.get(name, {}).get("echo", False)
