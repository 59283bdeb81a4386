"""Enumeration of relation applications and batched activation evaluation.

A catalog is an immutable, deterministically ordered list of
(family, instance, primitive-tuple) applications with a flat index
0..M-1.  The enumeration is pure integer arithmetic, so the order is
bit-stable across platforms.

Canonicalization (version 1) removes tuples that are exact duplicates
under the kernels' proven symmetries:

* ``above``, ``left``, ``contains``: all ordered pairs (i, j), i != j
* ``h_align``, ``v_align``, ``near``: unordered pairs, i < j
* ``tri``: apex i free, wings unordered (j < k)
* ``turn``: middle j free, endpoints unordered (i < k)
* ``orient``: first edge canonical (i < j), second edge (k, l) ordered,
  all four indices distinct
* ``eqdist``: unordered pair of unordered disjoint edges
  (i < j, k < l, (i, j) < (k, l))

Block order is presence, then binary, ternary, quaternary families, with
per-target-angle instances forming contiguous sub-blocks; within a block
tuples are in lexicographic order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations, permutations

import numpy as np

from . import autodiff as ad
from . import predicates as pred

CANONICAL_VERSION = 1
ALL_FAMILIES = ("presence", "binary", "ternary", "quaternary")


def fnv1a64(data: bytes) -> str:
    """64-bit FNV-1a, returned as 16 lowercase hex characters."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return f"{h:016x}"


@dataclass
class RelationCatalog:
    K: int
    n_tri: int
    n_turn: int
    n_orient: int
    families: tuple
    entries: list                      # [(family_kind, instance, tuple), ...]
    groups: list                       # [(family_kind, instance, np.ndarray (n, arity))]
    restricted: bool = False
    _index: dict = field(default_factory=dict, repr=False)

    @property
    def M(self):
        return len(self.entries)

    def __post_init__(self):
        self._index = {(f, inst, tup): m for m, (f, inst, tup) in enumerate(self.entries)}

    def index_of(self, entry):
        return self._index[entry]

    def tuple_of(self, m):
        return self.entries[m]

    def canonical_listing(self) -> str:
        head = (f"v{CANONICAL_VERSION}|K={self.K}|tri={self.n_tri}|turn={self.n_turn}"
                f"|orient={self.n_orient}|families={','.join(self.families)}"
                f"|restricted={int(self.restricted)}")
        lines = [head]
        lines.extend(f"{f}:{inst}:{','.join(map(str, tup))}" for f, inst, tup in self.entries)
        return "\n".join(lines)

    def fingerprint(self) -> str:
        return fnv1a64(self.canonical_listing().encode("utf-8"))

    def descriptor(self) -> dict:
        d = {
            "K": self.K,
            "counts": {"tri": self.n_tri, "turn": self.n_turn, "orient": self.n_orient},
            "families": list(self.families),
            "canonical_version": CANONICAL_VERSION,
            "M": self.M,
            "fingerprint": self.fingerprint(),
        }
        if self.restricted:
            d["restricted"] = True
            d["entries"] = [[f, inst, list(tup)] for f, inst, tup in self.entries]
        return d

    def restrict(self, indices):
        """Catalog containing only the given flat indices, re-indexed densely."""
        keep = sorted(int(i) for i in indices)
        entries = [self.entries[m] for m in keep]
        return RelationCatalog(self.K, self.n_tri, self.n_turn, self.n_orient,
                               self.families, entries, _group(entries), restricted=True)


def _group(entries):
    """Contiguous (family, instance) runs as index arrays for vectorized evaluation."""
    groups = []
    cur_key, cur = None, []
    for f, inst, tup in entries:
        key = (f, inst)
        if key != cur_key:
            if cur:
                groups.append((cur_key[0], cur_key[1], np.asarray(cur, dtype=np.int64)))
            cur_key, cur = key, []
        cur.append(tup)
    if cur:
        groups.append((cur_key[0], cur_key[1], np.asarray(cur, dtype=np.int64)))
    return groups


def build_catalog(K, n_tri=3, n_turn=1, n_orient=4, families=ALL_FAMILIES):
    """Enumerate every valid application for K primitives, in canonical order."""
    if K < 1:
        raise ValueError("build_catalog: K must be >= 1")
    families = tuple(families)
    entries = []
    if "presence" in families:
        entries.extend(("presence", 0, (k,)) for k in range(K))
    if "binary" in families and K >= 2:
        for kind in pred.ORDERED_BINARY:
            entries.extend((kind, 0, (i, j)) for i, j in permutations(range(K), 2))
        for kind in pred.SYMMETRIC_BINARY:
            entries.extend((kind, 0, (i, j)) for i, j in combinations(range(K), 2))
    if "ternary" in families and K >= 3:
        tri_tuples = [(i, j, k) for i in range(K)
                      for j, k in combinations([x for x in range(K) if x != i], 2)]
        for n in range(n_tri):
            entries.extend(("tri", n, t) for t in tri_tuples)
        turn_tuples = []
        for i in range(K):
            for j in range(K):
                if j == i:
                    continue
                for k in range(i + 1, K):
                    if k != j:
                        turn_tuples.append((i, j, k))
        turn_tuples.sort()
        for ell in range(n_turn):
            entries.extend(("turn", ell, t) for t in turn_tuples)
    if "quaternary" in families and K >= 4:
        orient_tuples = [(i, j, k, l)
                         for i, j in combinations(range(K), 2)
                         for k, l in permutations([x for x in range(K) if x not in (i, j)], 2)]
        orient_tuples.sort()
        for m in range(n_orient):
            entries.extend(("orient", m, t) for t in orient_tuples)
        edges = list(combinations(range(K), 2))
        eq_tuples = sorted(e1 + e2 for e1, e2 in combinations(edges, 2)
                           if not set(e1) & set(e2))
        entries.extend(("eqdist", 0, t) for t in eq_tuples)
    return RelationCatalog(K, n_tri, n_turn, n_orient, families, entries, _group(entries))


def closed_form_m(K, n_tri=3, n_turn=1, n_orient=4, families=ALL_FAMILIES):
    """Closed-form entry count, verified by enumeration in the test suite."""
    def c2(n):
        return n * (n - 1) // 2

    m = 0
    if "presence" in families:
        m += K
    if "binary" in families and K >= 2:
        m += 3 * K * (K - 1) + 3 * c2(K)
    if "ternary" in families and K >= 3:
        m += (n_tri + n_turn) * K * c2(K - 1)
    if "quaternary" in families and K >= 4:
        m += n_orient * c2(K) * (K - 2) * (K - 3)
        m += c2(c2(K)) - K * c2(K - 1)
    return m


def evaluate_activations(catalog, vocab, centers, sigma, boxes):
    """Activation vector a in [0,1]^M for a batch of descriptor sets.

    ``centers`` (B, K, 2), ``sigma`` (B, K), ``boxes`` (B, K, 4) are graph
    tensors; the result (B, M) is differentiable through descriptors and
    vocabulary parameters.  Shared geometry (interior/turn angles, edge
    dots, length ratios) is computed once per tuple set and reused across
    target-angle instances.
    """
    if sigma.shape[-1] != catalog.K:
        raise ValueError(
            f"evaluate_activations: got {sigma.shape[-1]} descriptors, catalog expects {catalog.K}")
    blocks = []
    cache = {}
    for kind, inst, tuples in catalog.groups:
        idx = tuples.T
        if kind == "presence":
            blocks.append(ad.take(sigma, idx[0], axis=1))
        elif kind in pred.BINARY_KINDS:
            ci = ad.take(centers, idx[0], axis=1)
            cj = ad.take(centers, idx[1], axis=1)
            if kind == "contains":
                bi = ad.take(boxes, idx[0], axis=1)
                bj = ad.take(boxes, idx[1], axis=1)
                blocks.append(pred.eval_binary(kind, vocab, ci, cj, bi, bj))
            else:
                blocks.append(pred.eval_binary(kind, vocab, ci, cj))
        elif kind == "tri":
            key = ("tri", tuples.tobytes())
            if key not in cache:
                cache[key] = pred.interior_angle(ad.take(centers, idx[0], axis=1),
                                                 ad.take(centers, idx[1], axis=1),
                                                 ad.take(centers, idx[2], axis=1))
            alpha = cache[key]
            psi = ad.take(vocab["psi"], np.array(inst), axis=0)
            beta = ad.take(vocab["beta"], np.array(inst), axis=0)
            blocks.append(pred.bump(alpha, psi, beta))
        elif kind == "turn":
            key = ("turn", tuples.tobytes())
            if key not in cache:
                cache[key] = pred.turning_angle(ad.take(centers, idx[0], axis=1),
                                                ad.take(centers, idx[1], axis=1),
                                                ad.take(centers, idx[2], axis=1))
            theta = cache[key]
            phi = ad.take(vocab["phi_turn"], np.array(inst), axis=0)
            eta = ad.take(vocab["eta"], np.array(inst), axis=0)
            blocks.append(pred.bump(theta, phi, eta))
        elif kind == "orient":
            key = ("orient", tuples.tobytes())
            if key not in cache:
                v1 = ad.take(centers, idx[1], axis=1) - ad.take(centers, idx[0], axis=1)
                v2 = ad.take(centers, idx[3], axis=1) - ad.take(centers, idx[2], axis=1)
                cache[key] = ad.sum_(v1 * v2, axis=-1) / (
                    pred._floored_norm(v1) * pred._floored_norm(v2))
            dot = cache[key]
            phi = ad.take(vocab["phi_orient"], np.array(inst), axis=0)
            gamma = ad.take(vocab["gamma"], np.array(inst), axis=0)
            diff = dot - pred._cos(phi)
            blocks.append(ad.exp(-(diff * diff) / (2.0 * gamma * gamma)))
        elif kind == "eqdist":
            v1 = ad.take(centers, idx[1], axis=1) - ad.take(centers, idx[0], axis=1)
            v2 = ad.take(centers, idx[3], axis=1) - ad.take(centers, idx[2], axis=1)
            ratio = ad.log(pred._floored_norm(v1) / pred._floored_norm(v2))
            tau_d = vocab["tau_d"]
            blocks.append(ad.exp(-(ratio * ratio) / (2.0 * tau_d * tau_d)))
        else:
            raise ValueError(f"unknown catalog family: {kind}")
    if not blocks:
        raise ValueError("evaluate_activations: empty catalog")
    return blocks[0] if len(blocks) == 1 else ad.concat(blocks, axis=1)
