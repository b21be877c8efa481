"""Tests for MAM channels."""
import numpy as np
import pytest

from tangleac.core.config import PowConfig
from tangleac.core.errors import BadSeedLength, BadSignature, ChannelNotFound, ConfigError
from tangleac.core.mam import (NOT_FOUND, Channel, ChannelRegistry, MamMessage, RegistryEntry, channel_open,
                               fetch_latest, fetch_message, publish)
from tangleac.core.tangle import TangleStore

SEED = bytes(range(32))


def test_channel_requires_32_byte_seed():
    with pytest.raises(BadSeedLength):
        channel_open(b'short')


def test_channel_derivation_is_deterministic():
    a, b = channel_open(SEED), channel_open(SEED)
    assert a.root == b.root
    assert a.verify_key == b.verify_key
    assert a.address(1) != a.address(0)
    assert channel_open(bytes(32)).root != a.root


@pytest.mark.parametrize('k', [1, 2, 5, 10])
def test_fetch_latest_after_k_publishes(store, k):
    """Test that walking from the root returns the k-th message after k publishes."""
    channel = channel_open(SEED)
    for i in range(1, k + 1):
        publish(channel, 'message {}'.format(i).encode(), store)
    assert fetch_latest(store, channel.root, channel.verify_key) == ('message {}'.format(k).encode(), k)


def test_publish_returns_message_address(store):
    channel = channel_open(SEED)
    assert publish(channel, b'one', store) == channel.root
    assert publish(channel, b'two', store) == channel.address(1)
    body, next_address = fetch_message(store, channel.root, channel.verify_key)
    assert body == b'one'
    assert next_address == channel.address(1)


def test_fetch_message_not_found(store):
    result = fetch_message(store, channel_open(SEED).root, channel_open(SEED).verify_key)
    assert result is NOT_FOUND
    assert not result


def test_fetch_latest_empty_channel(store):
    channel = channel_open(SEED)
    with pytest.raises(ChannelNotFound):
        fetch_latest(store, channel.root, channel.verify_key)


def test_wrong_verify_key(store):
    channel = channel_open(SEED)
    publish(channel, b'body', store)
    with pytest.raises(BadSignature):
        fetch_message(store, channel.root, channel_open(bytes(32)).verify_key)


def test_forged_next_message(store):
    """Test that a message attached at the channel's next address by someone without the seed is rejected."""
    channel = channel_open(SEED)
    publish(channel, b'genuine', store)

    forger = channel_open(bytes(32))
    forged = forger.sign(b'forged', forger.address(1))
    store.attach(channel.address(1), forged.encode())
    with pytest.raises(BadSignature):
        fetch_latest(store, channel.root, channel.verify_key)


def test_genuine_message_wins_over_spam(store):
    channel = channel_open(SEED)
    store.attach(channel.root, b'not a channel message')
    publish(channel, b'genuine', store)
    assert fetch_latest(store, channel.root, channel.verify_key) == (b'genuine', 1)


def test_message_decode_rejects_truncation():
    message = channel_open(SEED).sign(b'body', bytes(32))
    assert MamMessage.decode(message.encode()) == message
    with pytest.raises(BadSignature):
        MamMessage.decode(message.encode()[:-1])


def test_resume_continues_channel(store):
    channel = channel_open(SEED)
    publish(channel, b'one', store)
    publish(channel, b'two', store)

    reopened = Channel(SEED).resume(2)
    publish(reopened, b'three', store)
    assert fetch_latest(store, channel.root, channel.verify_key) == (b'three', 3)


def test_registry_round_trip(tmp_path):
    path = tmp_path / 'registry.tsv'
    channel = channel_open(SEED)
    registry = ChannelRegistry(str(path))
    registry.add(RegistryEntry(policy='Division:IS AND Role:Student', root=channel.root,
                               verify_key=channel.verify_key))

    reloaded = ChannelRegistry(str(path))
    assert len(reloaded) == 1
    entry = reloaded.by_policy('Division:IS AND Role:Student')
    assert entry.root == channel.root
    assert reloaded.by_root(channel.root) == entry
    assert reloaded.by_root(bytes(32)) is None


def test_registry_rejects_malformed_lines(tmp_path):
    path = tmp_path / 'registry.tsv'
    path.write_text('only-one-field\n')
    with pytest.raises(ConfigError):
        ChannelRegistry(str(path))


def test_addresses_are_distinct():
    channel = channel_open(SEED)
    assert len({channel.address(i) for i in range(1001)}) == 1001


def test_seed_never_reaches_the_tangle(store):
    seed = np.random.default_rng(8).bytes(32)
    channel = channel_open(seed)
    for i in range(5):
        publish(channel, b'message %d' % i, store)

    assert all(seed not in tx.payload for tx in store.transactions.values())
    payloads = [payload for i in range(5) for payload in store.fetch_bundles(channel.address(i))]
    assert all(seed not in payload for payload in payloads)


def test_other_channels_keys_never_verify(store):
    """Test that a message signed with one random seed never verifies under the key derived from another."""
    rng = np.random.default_rng(13)
    for _ in range(20):
        a, b = channel_open(rng.bytes(32)), channel_open(rng.bytes(32))
        publish(a, rng.bytes(int(rng.integers(1, 100))), store)
        with pytest.raises(BadSignature):
            fetch_message(store, a.root, b.verify_key)


def test_large_message_spans_a_bundle():
    store = TangleStore(PowConfig(difficulty=1, payload_capacity=1024), rng=np.random.default_rng(2), clock=lambda: 0)
    body = np.random.default_rng(3).bytes(3072)
    channel = channel_open(SEED)
    publish(channel, body, store)

    assert store.stats['transactions_attached'] == 4
    assert fetch_message(store, channel.root, channel.verify_key) == (body, channel.address(1))
