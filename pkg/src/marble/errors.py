"""Exception hierarchy shared across the package.

Every error carries a stable ``code`` (its class name) so the CLI and the
HTTP service can report machine-readable failures.
"""

from __future__ import annotations


class MarbleError(Exception):
    """Base class for all package errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


class EncoderNotFound(MarbleError):
    """Requested encoder_id is not present in the encoder registry."""


class EncoderUnavailable(MarbleError):
    """Encoder is registered but its weights or runtime deps cannot load."""


class InvalidImage(MarbleError):
    """Input bytes or array could not be decoded as an RGB image."""


class IncompatibleEmbeddings(MarbleError):
    """Vectors from different encoders or of mismatched length were mixed."""


class InvalidWeight(MarbleError):
    """Blend weight outside [0, 1] without the extrapolation escape hatch."""


class HeterogeneousPairs(MarbleError):
    """Pair set mixes attributes or encoders, or is empty."""


class DegenerateDirections(MarbleError):
    """Direction matrix carries no signal (all rows zero)."""


class TrainingDiverged(MarbleError):
    """Loss became non-finite during editor training."""


class UnsupportedCheckpoint(MarbleError):
    """Checkpoint magic or version is not one this build can read."""


class ChecksumFailure(MarbleError):
    """Checkpoint payload does not match its trailing CRC."""


class EmptyMask(MarbleError):
    """Foreground mask selects no pixels."""


class DepthUnavailable(MarbleError):
    """No depth raster was provided and no estimator is configured."""


class InvalidInjectionConfig(MarbleError):
    """Injection targets a block the backend does not advertise."""


class BackendError(MarbleError):
    """Generation backend failed; message carries backend diagnostics."""


class InvalidSchedule(MarbleError):
    """Attribute schedule request cannot produce a valid grid."""


class RegistryUnderflow(MarbleError):
    """Asset or HDR registry holds fewer entries than requested."""


class JobEmitError(MarbleError):
    """Render job files could not be written."""


class EmptyDataset(MarbleError):
    """Ingestion found zero complete objects."""


class IncompatibleImages(MarbleError):
    """Metric inputs differ in shape or channel count."""


class MetricUnavailable(MarbleError):
    """Requested metric model is not present in the metric registry."""
