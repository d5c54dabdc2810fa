"""Exception types shared across the package."""


class ConfigurationError(Exception):
    """A config value or combination of values is invalid."""


class ProtocolError(Exception):
    """A state machine was driven outside its contract (engine bug or misconfiguration)."""


class AlignmentError(ProtocolError):
    """A pulse message arrived outside the receiver's matching iteration.

    Raised only when iteration-alignment enforcement is active (ideal source,
    fault-free, validated runs); carries enough context to locate the event.
    """

    def __init__(self, vertex: int, layer: int, got_index: int, expected_index: int, time: float):
        self.vertex = vertex
        self.layer = layer
        self.got_index = got_index
        self.expected_index = expected_index
        self.time = time
        super().__init__(
            f"pulse {got_index} from a correct predecessor reached node "
            f"(v={vertex}, layer={layer}) during iteration {expected_index} at t={time!r}"
        )
