# -*- encoding: utf-8 -*-
"""Signals emitted by the estimator and the batch runners so callers can
follow long simulation runs (progress logs, live sinks) without the core
code knowing about them"""
import logging
from contextlib import contextmanager
from typing import Callable, List

LOGGER = logging.getLogger(__name__)


class Signal(object):
    """A named list of receivers notified with keyword arguments"""

    def __init__(self, name: str):
        self.name = name
        self.event_receivers: List[Callable] = []

    def __repr__(self):
        return f"Signal({self.name!r}, receivers={len(self.event_receivers)})"

    def add_receiver(self, receiver: Callable) -> None:
        """Add a receiver to the list of receivers.

        :param receiver: a callable accepting the signal's keyword arguments
        """
        if not callable(receiver):
            raise TypeError("receiver must be callable")
        self.event_receivers.append(receiver)

    def remove_receiver(self, receiver: Callable) -> None:
        """Remove a receiver, ignoring unknown ones."""
        if receiver in self.event_receivers:
            self.event_receivers.remove(receiver)

    @contextmanager
    def connected(self, receiver: Callable):
        """Attach a receiver for the duration of a with-block."""
        self.add_receiver(receiver)
        try:
            yield receiver
        finally:
            self.remove_receiver(receiver)

    def send(self, **kwargs) -> None:
        """Notify every receiver; the first exception stops the dispatch."""
        for receiver in list(self.event_receivers):
            receiver(**kwargs)

    def send_robust(self, **kwargs) -> int:
        """Notify every receiver, logging instead of raising on failure.

        Batch runs use this so a broken progress hook never kills a
        replication. Returns the number of receivers that failed.
        """
        failures = 0
        for receiver in list(self.event_receivers):
            try:
                receiver(**kwargs)
            except Exception:  # pylint: disable=W0703
                failures += 1
                LOGGER.exception(
                    'Exception while sending %s to "%s".',
                    self.name,
                    getattr(receiver, "__name__", repr(receiver)),
                )
        return failures


# estimator.fit -> estimate=GomEstimate
FIT_FINISHED = Signal("fit_finished")
# simulate.run_replications -> scenario=SimScenario, replication=int, record=dict
REPLICATION_FINISHED = Signal("replication_finished")
