"""
Tests package for defect triage.
"""
