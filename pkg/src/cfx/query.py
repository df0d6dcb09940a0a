"""Effect queries and response functionals."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import InputError
from .scm import Label, ScmModel, Trajectory, VarId


@dataclass(frozen=True)
class ResponseSpec:
    """The quantity ``Y`` whose counterfactual change is decomposed.

    ``kind == "state"``: the numeric value of ``S_k``.
    ``kind == "return"``: ``sum_{k=start}^{stop} gamma^(k-start) * value(S_k)``.
    """

    kind: str
    k: int = 0
    gamma: float = 1.0
    start: int = 0
    stop: int = 0

    def __post_init__(self):
        if self.kind not in ("state", "return"):
            raise InputError(f"unknown response kind {self.kind!r}")
        if self.kind == "return":
            if not 0.0 < self.gamma <= 1.0:
                raise InputError("discount must lie in (0, 1]")
            if not 0 <= self.start <= self.stop:
                raise InputError("return window needs 0 <= start <= stop")
        elif self.k < 0:
            raise InputError("state index must be non-negative")

    @classmethod
    def state(cls, k: int) -> "ResponseSpec":
        return cls("state", k=int(k))

    @classmethod
    def discounted_return(cls, gamma: float, start: int, stop: int) -> "ResponseSpec":
        return cls("return", gamma=float(gamma), start=int(start), stop=int(stop))

    @property
    def t_y(self) -> int:
        """Last state index the response depends on."""
        return self.k if self.kind == "state" else self.stop

    @property
    def first(self) -> int:
        return self.k if self.kind == "state" else self.start

    def weight(self, k: int) -> float:
        """Coefficient of ``value(S_k)`` in the response."""
        if self.kind == "state":
            return 1.0 if k == self.k else 0.0
        if self.start <= k <= self.stop:
            return self.gamma ** (k - self.start)
        return 0.0

    def check(self, model: ScmModel) -> "ResponseSpec":
        if self.t_y > model.h:
            raise InputError(f"response reaches S{self.t_y} but the horizon is {model.h}")
        return self

    def evaluate_values(self, model: ScmModel, values: Sequence[Label]) -> float:
        stride = model.n + 1
        if self.kind == "state":
            return model.state_value(values[self.k * stride])
        return math.fsum(
            (self.gamma ** (k - self.start)) * model.state_value(values[k * stride])
            for k in range(self.start, self.stop + 1)
        )

    def evaluate(self, traj: Trajectory) -> float:
        return self.evaluate_values(traj.model, traj.values)

    def describe(self) -> str:
        if self.kind == "state":
            return f"S{self.k}"
        return f"return:{self.gamma!r}:{self.start}:{self.stop}"

    @classmethod
    def parse(cls, text: str, horizon: int, default_gamma: float = 0.99) -> "ResponseSpec":
        """``S<k>``, ``final``, ``return`` or ``return:<gamma>[:<start>:<stop>]``."""
        text = (text or "").strip()
        if text in ("", "final"):
            return cls.state(horizon)
        if text.startswith("S"):
            return cls.state(VarId.parse(text).t)
        if text.startswith("return"):
            parts = text.split(":")
            try:
                gamma = float(parts[1]) if len(parts) > 1 and parts[1] else default_gamma
                start = int(parts[2]) if len(parts) > 2 else 0
                stop = int(parts[3]) if len(parts) > 3 else horizon
            except ValueError:
                raise InputError(f"cannot parse response {text!r}") from None
            return cls.discounted_return(gamma, start, stop)
        raise InputError(f"cannot parse response {text!r}")


@dataclass(frozen=True)
class EffectQuery:
    """``(tau, agent i, time t, alternative action a, response Y)``."""

    tau: Trajectory
    agent: int
    time: int
    action: Label
    response: ResponseSpec

    def __post_init__(self):
        model = self.tau.model
        if not 1 <= self.agent <= model.n:
            raise InputError(f"agent must be in 1..{model.n}")
        if not 0 <= self.time < model.h:
            raise InputError(f"time must be in 0..{model.h - 1}")
        if self.action not in model.action_domain(self.agent, self.time):
            raise InputError(f"{self.action!r} is not an action of agent {self.agent}")
        self.response.check(model)

    @property
    def model(self) -> ScmModel:
        return self.tau.model

    @property
    def target(self) -> VarId:
        return VarId.action(self.agent, self.time)

    @property
    def reference(self) -> Label:
        return self.tau[self.target]

    @property
    def is_null(self) -> bool:
        return self.action == self.reference

    @property
    def factual_response(self) -> float:
        return self.response.evaluate(self.tau)

    def with_response(self, response: ResponseSpec) -> "EffectQuery":
        return EffectQuery(self.tau, self.agent, self.time, self.action, response)

    def describe(self) -> dict:
        return {
            "agent": self.agent,
            "agent_name": self.model.agent_names[self.agent - 1],
            "time": self.time,
            "action": repr(self.action) if not isinstance(self.action, str) else self.action,
            "reference": repr(self.reference) if not isinstance(self.reference, str) else self.reference,
            "response": self.response.describe(),
        }
