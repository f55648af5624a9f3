"""
Tests for the kalman-gp package.
"""
