"""
Controllers Package

Controllers that coordinate between the command handlers and services.
"""
