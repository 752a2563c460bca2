from ._lidarfuse import *  # noqa: F401,F403
