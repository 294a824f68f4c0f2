"""Independent reference computations used only by the tests."""
