"""Utility functions"""
from .logger import JsonlWriter, get_logger, log_settings, setup_logger

__all__ = ['JsonlWriter', 'get_logger', 'log_settings', 'setup_logger']
