from src.utils.errors import *