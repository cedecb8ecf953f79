"""Typed error hierarchy shared across the pipeline stages."""


class Ot3dError(Exception):
    """Base class for every error raised by this package."""


# --- bundle ingestion ---------------------------------------------------


class MissingFile(Ot3dError):
    """A file referenced by the bundle manifest does not exist."""


class MalformedManifest(Ot3dError):
    """manifest.json is not valid JSON or violates the manifest schema."""


class DimMismatch(Ot3dError):
    """Dimensions disagree: blob size vs declared shape, or vector lengths."""


class InvalidPose(Ot3dError):
    """A pose matrix is non-finite or not a rigid transform within tolerance."""


class MalformedMask(Ot3dError):
    """An RLE mask whose runs do not sum to the image pixel count."""


class InvalidBundle(Ot3dError):
    """A bundle field violates a structural invariant not covered above."""


# --- lifting ------------------------------------------------------------


class EmptyLift(Ot3dError):
    """No mask pixel survived depth-range filtering during back-projection."""


class AllNoise(Ot3dError):
    """Density clustering labeled every lifted point as noise."""


class NoFeatureSupport(Ot3dError):
    """No descriptor available: no feature cell falls inside mask or bbox."""


# --- voxels / tracking --------------------------------------------------


class VoxelSizeMismatch(Ot3dError):
    """Set operation attempted across voxel sets with different cell sizes."""


class ZeroVector(Ot3dError):
    """A vector that must be normalized has zero length."""


# --- refinement ---------------------------------------------------------


class EmptyProposal(Ot3dError):
    """A refinement stage left a proposal with no scene points."""


# --- classification / evaluation ----------------------------------------


class NoVisibleView(Ot3dError):
    """A proposal has zero frustum overlap with every camera view."""


class ProtocolError(Ot3dError):
    """The jobs/answers exchange violated the classifier wire protocol."""


class UnknownLabel(Ot3dError):
    """A predicted label falls outside the declared closed label set."""


# --- synthesis / orchestration -------------------------------------------


class InvalidSpec(Ot3dError):
    """A synthetic scene spec violates its constraints."""


class IndexOutOfRange(Ot3dError):
    """An instance references a point index outside the scene cloud."""


class ConfigError(Ot3dError):
    """Pipeline configuration failed validation."""
