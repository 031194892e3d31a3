"""RGB-D neural radiance fields with depth-guided local ray sampling."""
__version__ = "0.1.0"
