"""Shared configs and metric cases for DERL tests."""
