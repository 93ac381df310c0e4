"""Minimal SIP session layer: registration, INVITE handshake, BYE teardown.

One shared state machine per session walks Idle, Inviting, Ringing,
Established, Terminating, Closed; any state may fall to Closed on timeout or
protocol violation.  Every message travels caller -> proxy -> callee through
the same network fabric as media, so setup delay is real transport delay.
Media gating is the caller's job: the call scheduler starts frames on the
established callback and stops them at the scheduled call end.
"""

from __future__ import annotations

from .simcore import SimError, Simulator

SIP_MESSAGE_BYTES = 500  # uniform size; SIP is text, a few hundred bytes

IDLE = "Idle"
INVITING = "Inviting"
RINGING = "Ringing"
ESTABLISHED = "Established"
TERMINATING = "Terminating"
CLOSED = "Closed"

INVITE = "INVITE"
RINGING_180 = "RINGING_180"
OK_200 = "OK_200"
ACK = "ACK"
BYE = "BYE"


class SipError(SimError):
    pass


class NotFound(SipError):
    """Registry lookup of an unregistered URI."""


class CalleeUnregistered(SipError):
    pass


class CalleeBusy(SipError):
    pass


class ProtocolViolation(SipError):
    """Message illegal in the session's current state."""


class Binding:
    def __init__(self, uri: str, location: str, refreshed: bool):
        self.uri = uri
        self.location = location
        self.refreshed = refreshed


class SipAgent:
    def __init__(self, uri: str, home_proxy: str):
        self.uri = uri
        self.home_proxy = home_proxy
        self.registered = False


class SipProxy:
    """URI registry; re-registration refreshes the binding in place."""

    def __init__(self, name: str = "proxy"):
        self.name = name
        self.registry: dict[str, str] = {}

    def register(self, agent: SipAgent, location: str | None = None) -> Binding:
        refreshed = agent.uri in self.registry
        self.registry[agent.uri] = location if location is not None else agent.uri
        agent.registered = True
        return Binding(agent.uri, self.registry[agent.uri], refreshed)

    def lookup(self, uri: str) -> str:
        try:
            return self.registry[uri]
        except KeyError:
            raise NotFound(uri) from None


class SipMessage:
    __slots__ = ("kind", "session", "src", "dst")

    def __init__(self, kind: str, session: "SipSession", src: str, dst: str):
        self.kind = kind
        self.session = session
        self.src = src
        self.dst = dst


class SipSession:
    def __init__(self, session_id: int, caller: str, callee: str, t_invite: int):
        self.session_id = session_id
        self.caller = caller
        self.callee = callee
        self.state = IDLE
        self.t_invite = t_invite
        self.t_established: int | None = None
        self.answered = False  # 200 seen by caller, ACK on the way
        self.call = None  # attached by the call scheduler once media starts
        self.on_established = None
        self.on_closed = None
        self._timeout_event: int | None = None
        self._answer_event: int | None = None


class SessionLayer:
    """Drives SIP sessions over a fabric.

    The fabric only needs send(item, size_bytes, src, dst, on_end, on_fail);
    the proxy sits at `proxy_node`, adding a fixed processing delay per relay.
    """

    def __init__(self, sim: Simulator, fabric, *,
                 answer_delay_us: int = 2_000_000,
                 invite_timeout_us: int = 32_000_000,
                 proxy_proc_us: int = 1_000,
                 proxy_node: str = "proxy",
                 session_log: list[str] | None = None):
        self.sim = sim
        self.fabric = fabric
        self.answer_delay_us = answer_delay_us
        self.invite_timeout_us = invite_timeout_us
        self.proxy_proc_us = proxy_proc_us
        self.proxy_node = proxy_node
        self.session_log = session_log
        self.proxy = SipProxy(proxy_node)
        self.agents: dict[str, SipAgent] = {}
        self.sessions: list[SipSession] = []
        self._in_session: set[str] = set()
        self._next_session_id = 0

    def add_agent(self, uri: str) -> SipAgent:
        agent = SipAgent(uri, self.proxy_node)
        self.agents[uri] = agent
        self.proxy.register(agent)
        return agent

    def register_all(self, uris) -> None:
        for uri in uris:
            self.add_agent(uri)

    # -- session control -------------------------------------------------

    def initiate(self, caller: str, callee: str, on_established, on_closed) -> SipSession:
        agent = self.agents.get(caller)
        if agent is None or not agent.registered:
            raise SipError(f"caller {caller} is not registered")
        try:
            self.proxy.lookup(callee)
        except NotFound:
            raise CalleeUnregistered(callee) from None
        if callee in self._in_session:
            raise CalleeBusy(callee)
        session = SipSession(self._next_session_id, caller, callee, self.sim.now)
        self._next_session_id += 1
        session.on_established = on_established
        session.on_closed = on_closed
        self.sessions.append(session)
        self._in_session.add(caller)
        self._in_session.add(callee)
        self._transition(session, INVITING)
        session._timeout_event = self.sim.schedule_in(
            self.invite_timeout_us, self._on_timeout, session, kind="sip-timeout")
        self._send(session, INVITE, caller, callee)
        return session

    def teardown(self, session: SipSession) -> None:
        if session.state == CLOSED:
            return
        if session.state != ESTABLISHED:
            raise SipError(f"teardown in state {session.state}")
        self._transition(session, TERMINATING)
        # same liveness escape as INVITE: a lost BYE or its 200 must not pin
        # the pair busy forever
        session._timeout_event = self.sim.schedule_in(
            self.invite_timeout_us, self._on_timeout, session, kind="sip-timeout")
        self._send(session, BYE, session.caller, session.callee)

    # -- transport -------------------------------------------------------

    def _send(self, session: SipSession, kind: str, src: str, dst: str) -> None:
        msg = SipMessage(kind, session, src, dst)
        self.sim.stats.sip_messages_sent += 1
        self.fabric.send(msg, SIP_MESSAGE_BYTES, src, self.proxy_node,
                         self._at_proxy, self._msg_lost)

    def _at_proxy(self, msg: SipMessage, _t: int) -> None:
        self.sim.schedule_in(self.proxy_proc_us, self._relay, msg, kind="sip-relay")

    def _relay(self, msg: SipMessage) -> None:
        self.fabric.send(msg, SIP_MESSAGE_BYTES, self.proxy_node, msg.dst,
                         self._deliver, self._msg_lost)

    def _msg_lost(self, _msg: SipMessage, _reason: str) -> None:
        self.sim.stats.sip_messages_dropped += 1

    # -- state machine ---------------------------------------------------

    def _deliver(self, msg: SipMessage, _t: int) -> None:
        self.sim.stats.sip_messages_delivered += 1
        session = msg.session
        if session.state == CLOSED:
            return  # stale message, session already over
        kind = msg.kind
        if kind == INVITE:
            if session.state != INVITING:
                self._violation(session)
                return
            self._send(session, RINGING_180, session.callee, session.caller)
            session._answer_event = self.sim.schedule_in(
                self.answer_delay_us, self._on_answer, session, kind="sip-answer")
        elif kind == RINGING_180:
            if session.state != INVITING:
                self._violation(session)
                return
            self._transition(session, RINGING)
        elif kind == OK_200:
            if session.state == TERMINATING:
                self._close(session)
            elif session.state in (INVITING, RINGING) and not session.answered:
                # a lost 180 may leave us in Inviting; the 200 still answers
                session.answered = True
                if session.state == INVITING:
                    self._transition(session, RINGING)
                self._send(session, ACK, session.caller, session.callee)
            else:
                self._violation(session)
        elif kind == ACK:
            if session.state != RINGING or not session.answered:
                self._violation(session)
                return
            self._cancel_timer(session)
            session.t_established = self.sim.now
            self._transition(session, ESTABLISHED)
            if session.on_established is not None:
                session.on_established(session)
        elif kind == BYE:
            if session.state != TERMINATING:
                self._violation(session)
                return
            self._send(session, OK_200, session.callee, session.caller)
        else:
            self._violation(session)

    def _on_answer(self, session: SipSession) -> None:
        session._answer_event = None
        if session.state in (INVITING, RINGING):
            self._send(session, OK_200, session.callee, session.caller)

    def _on_timeout(self, session: SipSession) -> None:
        session._timeout_event = None
        if session.state in (INVITING, RINGING):
            self.sim.stats.calls_failed_setup += 1
            self._close(session)
        elif session.state == TERMINATING:
            self._close(session)

    def _violation(self, session: SipSession) -> None:
        if session.state in (INVITING, RINGING):
            self.sim.stats.calls_failed_setup += 1
        self._close(session)

    def _close(self, session: SipSession) -> None:
        self._cancel_timer(session)
        if session._answer_event is not None:
            self.sim.cancel(session._answer_event)
            session._answer_event = None
        self._transition(session, CLOSED)
        self._in_session.discard(session.caller)
        self._in_session.discard(session.callee)
        if session.on_closed is not None:
            session.on_closed(session)

    def _cancel_timer(self, session: SipSession) -> None:
        if session._timeout_event is not None:
            self.sim.cancel(session._timeout_event)
            session._timeout_event = None

    def _transition(self, session: SipSession, new_state: str) -> None:
        old = session.state
        session.state = new_state
        if self.session_log is not None:
            self.session_log.append(
                f"{self.sim.now} {session.session_id} {old}→{new_state}")

    def all_closed(self) -> bool:
        return all(s.state == CLOSED for s in self.sessions)
