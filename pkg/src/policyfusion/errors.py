"""Exception types shared across the toolkit."""


class PolicyFusionError(Exception):
    """Base class for all toolkit errors."""


class NoActiveSubPolicy(PolicyFusionError):
    """Raised when a fusion operator requires at least one active sub-policy."""


class AllZeroProduct(PolicyFusionError):
    """Product fusion is undefined: the member supports are disjoint."""


class GridTooSmall(PolicyFusionError):
    """Requested grid size below the minimum."""


class EpisodeFinished(PolicyFusionError):
    """step() called on a terminal episode in terminal mode."""


class IncompatibleExpert(PolicyFusionError):
    """Scripted expert kind does not apply to this environment kind."""


class EncodingMismatch(PolicyFusionError):
    """Observation encoding does not match the policy descriptor."""


class DescriptorMismatch(PolicyFusionError):
    """Checkpoint architecture descriptor does not match the target environment."""


class NonFiniteLoss(PolicyFusionError):
    """An update produced a non-finite loss; the update is aborted."""


class VersionMismatch(PolicyFusionError):
    """Serialized file carries an unsupported format version."""


class CorruptFile(PolicyFusionError):
    """Serialized file failed its integrity check."""


class DegenerateNormalizer(PolicyFusionError):
    """Reward normalizer is non-positive."""


class ZeroPolicyProbability(PolicyFusionError):
    """Discriminator evaluated at an action the policy gives zero probability."""


class UnknownSession(PolicyFusionError):
    """Protocol message referenced a session id that does not exist."""


class MalformedMessage(PolicyFusionError):
    """Protocol message failed validation."""


class SessionBusy(PolicyFusionError):
    """A second controller tried to drive an already-controlled session."""
