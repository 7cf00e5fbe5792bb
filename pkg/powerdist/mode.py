from enum import IntEnum, unique


@unique
class NodeState(IntEnum):
    """The state a block detector reports for a node.

    The values are the state byte of a report datagram.
    """
    running = 0
    blocked = 1

    @classmethod
    def parse(cls, text):
        """Parse a state from its name or wire value.

        Parameters
        ----------
        text : str
            ``'running'``, ``'blocked'``, ``'0'`` or ``'1'``; case insensitive.

        Returns
        -------
        state : NodeState
            The parsed state.
        """
        text = text.strip().lower()
        try:
            return cls[text]
        except KeyError:
            pass
        try:
            return cls(int(text))
        except ValueError:
            raise ValueError(
                f'unknown node state {text!r}, expected running or blocked',
            )


@unique
class SimMode(IntEnum):
    """The power distribution strategies the simulator can run.
    """
    equal_share = 0
    ilp = 1
    heuristic = 2

    @classmethod
    def parse(cls, text):
        aliases = {
            'equal': cls.equal_share,
            'equal_share': cls.equal_share,
            'equal-share': cls.equal_share,
            'ilp': cls.ilp,
            'heuristic': cls.heuristic,
        }
        try:
            return aliases[text.strip().lower()]
        except KeyError:
            raise ValueError(
                f'unknown mode {text!r}, options: {sorted(aliases)}',
            )

    @property
    def label(self):
        """The short name used in CSV output.
        """
        return {
            SimMode.equal_share: 'equal',
            SimMode.ilp: 'ilp',
            SimMode.heuristic: 'heuristic',
        }[self]


@unique
class BudgetMode(IntEnum):
    """How the online controller computes the power budget of blocked nodes.

    ``safe`` credits each blocked node with the nominal bound less its idle
    power regardless of the reported gain, which keeps the cluster under its
    bound. ``reported`` sums the reported gains as they arrive.
    """
    safe = 0
    reported = 1
