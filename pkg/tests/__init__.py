# Test package for aplab
