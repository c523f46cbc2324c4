"""
Commands Package

argparse handlers for the command-line interface.
"""
