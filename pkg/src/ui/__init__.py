from src.ui.cli import * 