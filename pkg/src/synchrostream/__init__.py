"""synchrostream: a synchrophasor streaming toolkit.

Encode/decode C37.118-style binary frames, replay archives as paced UDP
streams, concentrate and time-align received frames, measure per-packet
latency from send/receive timestamp logs, and run an online
discount-Kalman anomaly detector on the 1 Hz frequency stream.
"""

__version__ = "0.1.0"

from .frames import (  # noqa: F401
    BadChecksum,
    BadSync,
    ChannelCountMismatch,
    CommandFrame,
    ConfigFrame,
    DataFrame,
    FrameDecodeError,
    FrameError,
    HeaderFrame,
    MeasurementRecord,
    MissingConfig,
    PhasorValue,
    SizeMismatch,
    crc16_ccitt,
    decode,
    encode,
    to_record,
    to_records,
)
