import base64
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robotledger.contract import (
    NOT_AUTHORIZED,
    POLICIES,
    ClientIdentity,
    ModePolicy,
    OperationMode,
    RobotAsset,
    RobotContract,
    get_client_identity,
    message_prefix,
)
from robotledger.errors import (
    AuthenticationError,
    AuthorizationError,
    ConflictError,
    NotFoundError,
    StateError,
    ValidationError,
)
from robotledger.identity import Certificate, issue_certificate
from robotledger.ledger import TxStatus

from conftest import Net


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode()


def test_setup_creates_three_free_assets(net):
    for name in ("Husky", "Turtlebot4", "OptiTrack"):
        asset = net.robot(name)
        assert asset.name == name
        assert asset.under_op is False and asset.operator == ""
    assert net.robot("Turtlebot4").required_attribute == "turtlebot4"
    assert net.robot("OptiTrack").mode is OperationMode.OPEN


def test_asset_json_uses_chaincode_tags(net):
    raw, _ = net.ledger.read_state("robot/Turtlebot4")
    doc = json.loads(raw)
    assert {"Name", "SubTopic", "PubTopic", "owner", "UnderOp"} <= doc.keys()
    assert doc["UnderOp"] is False


def test_setup_by_non_admin_is_rejected(net):
    tx = net.submit("setup", [json.dumps([{"name": "Spot"}])], net.farhad)
    assert tx.status is TxStatus.REJECTED and isinstance(tx.error, AuthorizationError)
    assert net.robot("Spot") is None


def test_setup_admin_of_other_org_is_rejected(net):
    admin2 = issue_certificate(net.ca2, "admin2", {"admin"})
    tx = net.submit("setup", [json.dumps([{"name": "Spot"}])], admin2)
    assert isinstance(tx.error, AuthorizationError)


def test_setup_duplicate_is_conflict(net):
    tx = net.submit("setup", [json.dumps([{"name": "Husky"}])], net.admin)
    assert isinstance(tx.error, ConflictError)
    tx = net.submit("setup", [json.dumps([{"name": "A"}, {"name": "A"}])], net.admin)
    assert isinstance(tx.error, ConflictError)


@pytest.mark.parametrize("arg", ["not json", json.dumps({"name": "x"}), json.dumps([1]),
                                 json.dumps([{"name": "x", "mode": "k-limited"}])])
def test_setup_malformed(net, arg):
    assert isinstance(net.submit("setup", [arg], net.admin).error, ValidationError)


def test_acquire_examples(net):
    tx = net.commit("acquire", ["Turtlebot4"], net.salma)
    assert tx.status is TxStatus.COMMITTED and tx.result is True
    asset = net.robot("Turtlebot4")
    assert asset.operator == "salma" and asset.under_op

    tx = net.commit("acquire", ["Turtlebot4"], net.farhad)
    assert tx.result is False
    assert net.robot("Turtlebot4").operator == "salma"

    before = net.ledger.read_state("robot/Husky")
    tx = net.commit("acquire", ["Husky"], net.farhad)
    assert tx.result is False
    assert net.ledger.read_state("robot/Husky") == before


def test_acquire_unknown_robot(net):
    assert isinstance(net.submit("acquire", ["Spot"], net.salma).error, NotFoundError)


def test_release_round_trip(net):
    net.commit("acquire", ["Turtlebot4"], net.salma)
    net.commit("release", ["Turtlebot4"], net.salma)
    assert net.robot("Turtlebot4").under_op is False
    assert net.commit("acquire", ["Turtlebot4"], net.farhad).result is True


def test_release_by_non_operator(net):
    net.commit("acquire", ["Turtlebot4"], net.salma)
    before = net.ledger.read_state("robot/Turtlebot4")
    tx = net.submit("release", ["Turtlebot4"], net.farhad)
    assert tx.status is TxStatus.REJECTED and isinstance(tx.error, AuthorizationError)
    net.settle()
    assert net.ledger.read_state("robot/Turtlebot4") == before


def test_release_free_robot_is_state_error(net):
    assert isinstance(net.submit("release", ["Husky"], net.salma).error, StateError)


def test_admin_can_force_release(net):
    net.commit("acquire", ["Turtlebot4"], net.salma)
    assert net.commit("release", ["Turtlebot4"], net.admin).status is TxStatus.COMMITTED
    assert net.robot("Turtlebot4").operator == ""


def test_authorize_examples(net):
    net.commit("acquire", ["Turtlebot4"], net.salma)
    assert net.submit("authorize", ["Turtlebot4"], net.salma).result is True
    assert net.submit("authorize", ["Turtlebot4"], net.farhad).result is False
    assert net.submit("authorize", ["OptiTrack"], net.salma).result is True
    assert net.submit("authorize", ["OptiTrack"], net.farhad).result is False
    assert isinstance(net.submit("authorize", ["Spot"], net.salma).error, NotFoundError)


def test_open_mode_acquire_has_no_side_effect(net):
    before = net.ledger.read_state("robot/OptiTrack")
    assert net.commit("acquire", ["OptiTrack"], net.salma).result is True
    assert net.commit("acquire", ["OptiTrack"], net.farhad).result is False
    assert net.ledger.read_state("robot/OptiTrack") == before
    assert net.robot("OptiTrack").operator == ""


def test_set_sequences_and_rejection(net):
    net.commit("acquire", ["Turtlebot4"], net.salma)
    txs = [net.submit("set", ["Turtlebot4", b64(bytes([i]))], net.salma) for i in range(3)]
    net.settle()
    assert [t.sequences for t in txs] == [(0,), (1,), (2,)]

    before = net.ledger.state.snapshot()
    tx = net.submit("set", ["Turtlebot4", b64(b"evil")], net.farhad)
    assert tx.status is TxStatus.REJECTED
    assert str(tx.error) == NOT_AUTHORIZED
    assert tx.write_set == [] and tx.appends == []
    net.settle()
    assert net.ledger.state.snapshot() == before


def test_set_on_free_robot_rejected(net):
    tx = net.submit("set", ["Husky", b64(b"x")], net.salma)
    assert str(tx.error) == NOT_AUTHORIZED


def test_set_bad_payload(net):
    net.commit("acquire", ["Turtlebot4"], net.salma)
    assert isinstance(net.submit("set", ["Turtlebot4", "***"], net.salma).error, ValidationError)


def test_wrong_arity(net):
    assert isinstance(net.submit("acquire", [], net.salma).error, ValidationError)
    assert isinstance(net.submit("set", ["Turtlebot4"], net.salma).error, ValidationError)


def test_fifty_hz_for_ten_seconds_gives_500_assets(net):
    net.commit("acquire", ["Turtlebot4"], net.salma)
    t0 = net.clock.now_ms
    for i in range(500):
        net.clock.advance_to(t0 + i * 20.0)
        net.ledger.submit("set", ["Turtlebot4", b64(b"cmd")], net.salma)
    net.settle()
    assert len(net.ledger.state.keys(message_prefix("Turtlebot4"))) == 500


def test_ungated_contract_skips_authorization():
    n = Net(gated=False)
    tx = n.commit("set", ["Turtlebot4", b64(b"x")], n.farhad)
    assert tx.status is TxStatus.COMMITTED


def test_get_client_identity(net):
    ident = get_client_identity(net.salma, net.membership)
    assert ident == ClientIdentity("salma", "Org1", frozenset({"turtlebot4", "husky", "optitrack"}))
    empty = get_client_identity(net.outsider, net.membership)
    assert empty.attributes == frozenset()
    forged = Certificate("salma", "Org1", frozenset({"admin"}), "Org1", net.salma.signature)
    with pytest.raises(AuthenticationError):
        get_client_identity(forged, net.membership)


def test_descriptor_defaults():
    r = RobotAsset.from_descriptor({"name": "Husky"})
    assert r.required_attribute == "husky"
    assert r.sub_topic == "/Husky/cmd_vel" and r.pub_topic == "/Husky/pose"
    assert RobotAsset.from_json(r.to_json()) == r
    with pytest.raises(ValidationError):
        RobotAsset.from_descriptor({"name": "a/b"})


def test_policy_registry_is_extensible():
    assert set(POLICIES) == set(OperationMode)
    assert all(isinstance(p, ModePolicy) for p in POLICIES.values())


def test_unknown_function(net):
    tx = net.submit("transfer", ["Husky"], net.salma)
    assert tx.status is TxStatus.REJECTED


# -- properties ------------------------------------------------------------------

ROBOTS = ("r0", "r1", "r2")
attrs = st.frozensets(st.sampled_from(ROBOTS), max_size=3)


@settings(max_examples=40, deadline=None)
@given(assignment=st.lists(attrs, min_size=2, max_size=5),
       script=st.lists(st.tuples(st.integers(0, 4), st.sampled_from(["acquire", "release", "set"]),
                                 st.sampled_from(ROBOTS), st.booleans()), max_size=40))
def test_attribute_necessity_and_exclusion(assignment, script):
    n = Net(robots=ROBOTS, open_robots=())
    users = [issue_certificate(n.ca1, f"u{i}", a) for i, a in enumerate(assignment)]
    for who, fn, robot, settle in script:
        cert = users[who % len(users)]
        args = [robot, b64(b"p")] if fn == "set" else [robot]
        before = n.ledger.read_state(f"robot/{robot}")
        tx = n.submit(fn, args, cert)
        if fn == "release" and tx.status is TxStatus.REJECTED:
            assert n.ledger.read_state(f"robot/{robot}") == before
        if settle:
            n.settle()
    n.settle()
    for block in n.ledger.blocks:
        for tx in block.transactions:
            if tx.status is not TxStatus.COMMITTED:
                continue
            holder_attrs = tx.submitter.attributes
            if tx.function == "acquire" and tx.result:
                assert tx.args[0] in holder_attrs
            if tx.function == "set":
                assert tx.args[0] in holder_attrs
    for r in ROBOTS:
        asset = n.robot(r)
        assert asset.under_op == bool(asset.operator)
