"""Attach a pairing session to one end of a link."""

from __future__ import annotations

from dataclasses import dataclass, field

from magicpair.codec import (
    DecodeError, FIXED_CID, L2capFrame, Message, check_channel, decode_frame,
    decode_message, encode_frame, encode_message)
from magicpair.session import FaultKind, FaultReport, Outcome, PairingSession, SessionOutput
from magicpair.transport import Endpoint, Link


@dataclass
class Delivery:
    """What happened to one received frame."""

    raw: bytes
    valid: bool
    message: Message | None = None
    error: DecodeError | None = None
    output: SessionOutput | None = None
    fault: FaultReport | None = None
    sent: list[bytes] = field(default_factory=list)


class Device:
    """Frame-level receiver in front of a session.

    Frames are checked, decoded and handed to :meth:`PairingSession.step`;
    replies go back over the link.  A fault marks the device as crashed until
    :meth:`restart` installs a fresh session.
    """

    def __init__(self, session: PairingSession, link: Link | None = None,
                 endpoint: Endpoint = Endpoint.B, channel_id: int = FIXED_CID,
                 on_send=None):
        self.session = session
        self.link = link
        self.endpoint = endpoint
        self.channel_id = channel_id
        self.crashed: FaultReport | None = None
        self.faults: list[FaultReport] = []
        self.on_send = on_send

    @property
    def policy(self):
        return self.session.policy

    def restart(self, session: PairingSession) -> None:
        self.session = session
        self.crashed = None

    def send_output(self, out: SessionOutput) -> list[bytes]:
        sent = []
        for msg in out.messages:
            raw = encode_frame(L2capFrame(self.channel_id, encode_message(msg)))
            sent.append(raw)
            if self.on_send is not None:
                self.on_send(raw)
            elif self.link is not None and self.link.connected:
                self.link.send(self.endpoint, raw)
        return sent

    def handle_frame(self, raw: bytes) -> Delivery:
        if self.crashed is not None:
            return Delivery(raw, valid=False, fault=self.crashed)
        try:
            frame = decode_frame(raw)
        except DecodeError as err:
            return Delivery(raw, valid=False, error=err)
        if frame.length == 0:
            if self.policy.empty_frame_fault:
                fault = FaultReport(FaultKind.ZERO_LENGTH_FRAME,
                                    "frame handler crashed on a zero-length frame")
                return self._crash(Delivery(raw, valid=False, fault=fault))
            # an empty frame carries nothing to dispatch
            return Delivery(raw, valid=True)
        try:
            check_channel(frame, self.channel_id)
        except DecodeError as err:
            return Delivery(raw, valid=False, error=err)
        try:
            incoming: Message | DecodeError = decode_message(frame.payload)
        except DecodeError as err:
            incoming = err
        out = self.session.step(incoming)
        delivery = Delivery(
            raw, valid=out.outcome is Outcome.ACCEPTED,
            message=incoming if isinstance(incoming, Message) else None,
            error=incoming if isinstance(incoming, DecodeError) else None,
            output=out, fault=out.fault)
        if out.fault is not None:
            return self._crash(delivery)
        delivery.sent = self.send_output(out)
        return delivery

    def _crash(self, delivery: Delivery) -> Delivery:
        self.crashed = delivery.fault
        self.faults.append(delivery.fault)
        if self.link is not None and self.link.connected:
            self.link.disconnect(f"target fault: {delivery.fault.kind.value}")
        return delivery

    def pump(self) -> list[Delivery]:
        """Process every frame waiting at this endpoint."""
        deliveries = []
        while self.link is not None and self.link.connected:
            raw = self.link.recv(self.endpoint)
            if raw is None:
                break
            d = self.handle_frame(raw)
            deliveries.append(d)
            if self.link.connected:
                self.link.report(self.endpoint, d.valid)
        return deliveries
