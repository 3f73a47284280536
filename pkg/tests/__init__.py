"""E2E tests for demo API."""
