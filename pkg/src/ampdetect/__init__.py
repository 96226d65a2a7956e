"""AMP-based user-activity detection and channel estimation for massive access."""
