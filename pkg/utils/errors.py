# exception types shared by all modules
# the exit code attribute is read by main.py

class DgsError(Exception):
    exit_code = 1

class ConfigError(DgsError, ValueError):
    pass

class StreamError(DgsError, ValueError):
    pass

class CheckpointError(DgsError, IOError):
    pass

class MetricError(DgsError, ValueError):
    pass

class NumericError(DgsError, FloatingPointError):
    exit_code = 2
