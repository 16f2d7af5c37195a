"""MagicPairing key derivation, codec, pairing state machines, attacks and fuzzers."""

from magicpair.codec import KeyEntry, KeyType, L2capFrame, Message, MsgType, StatusCode
from magicpair.keystore import Keystore
from magicpair.kernels import BACKEND
from magicpair.session import FaultKind, PairingSession, PolicyConfig, Role, State

__all__ = [
    "BACKEND", "FaultKind", "KeyEntry", "KeyType", "Keystore", "L2capFrame", "Message",
    "MsgType", "PairingSession", "PolicyConfig", "Role", "State", "StatusCode",
]
