"""Correlation-driven blocking of model dimensions.

Dimensions are clustered by the distance d_ij = 1 - |corr_ij| under
complete-linkage agglomeration. Cutting the dendrogram at a height h yields
blocks whose members all have pairwise |corr| >= 1 - h. The engine never cuts
globally during adaptation; it asks for the block containing one target
dimension at a given height.

Merging is deterministic: when several cluster pairs sit at the same minimal
distance, the pair whose (smallest leaf, other smallest leaf) tuple is
lexicographically least merges first. Heights are nondecreasing, a property
complete linkage guarantees.
"""

import json

import numpy as np

HEIGHT_GRID = (0.2, 0.4, 0.6, 0.8)
BLOCK_CAP = 50


class BlockingError(ValueError):
    pass


def distance_matrix(corr):
    """1 - |corr| with an exact zero diagonal."""
    corr = np.asarray(corr, dtype=float)
    m = corr.shape[0]
    if corr.ndim != 2 or corr.shape[1] != m:
        raise BlockingError("correlation matrix must be square")
    if not np.allclose(corr, corr.T, atol=1e-8):
        raise BlockingError("correlation matrix must be symmetric")
    if np.any(np.abs(corr) > 1.0 + 1e-8):
        raise BlockingError("correlations must lie in [-1, 1]")
    d = 1.0 - np.abs(np.clip(corr, -1.0, 1.0))
    # sample correlation matrices are symmetric only to rounding; the merge
    # logic scans for exact equality, so make symmetry exact
    d = np.minimum(d, d.T)
    np.fill_diagonal(d, 0.0)
    return d


class Dendrogram:
    """Merge tree over m leaves. Leaf ids are 0..m-1; the cluster created by
    merge t gets id m+t. Each merge is (left, right, height) with left the
    child holding the smaller minimum leaf."""

    def __init__(self, m, merges):
        self.m = m
        self.merges = [(int(l), int(r), float(h)) for l, r, h in merges]
        self._parent = {}
        self._children = {}
        for t, (l, r, h) in enumerate(self.merges):
            cid = m + t
            self._parent[l] = t
            self._parent[r] = t
            self._children[cid] = (l, r)

    def heights(self):
        return [h for _, _, h in self.merges]

    def leaves_of(self, cluster_id):
        """Sorted tuple of leaf ids under a cluster id."""
        stack = [cluster_id]
        out = []
        while stack:
            c = stack.pop()
            if c < self.m:
                out.append(c)
            else:
                stack.extend(self._children[c])
        return tuple(sorted(out))

    def block_containing(self, k, h):
        """Leaves of the largest cluster containing leaf k whose merges all
        sit at height <= h."""
        if not 0 <= k < self.m:
            raise BlockingError(f"leaf {k} outside 0..{self.m - 1}")
        cur = k
        while cur in self._parent:
            t = self._parent[cur]
            if self.merges[t][2] > h:
                break
            cur = self.m + t
        return self.leaves_of(cur)

    def cut(self, h):
        """All blocks from cutting at height h, as a sorted list of tuples."""
        blocks = []
        seen = set()
        for k in range(self.m):
            if k in seen:
                continue
            b = self.block_containing(k, h)
            seen.update(b)
            blocks.append(b)
        return blocks

    def to_dict(self):
        return {"m": self.m,
                "merges": [[l, r, repr(h)] for l, r, h in self.merges]}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["m"]),
                   [(int(l), int(r), float(h)) for l, r, h in d["merges"]])

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


def hclust_complete(dist):
    """Complete-linkage agglomeration of a distance matrix into a Dendrogram.

    Ties on merge distance resolve by the lexicographically least pair of
    cluster minimum-leaf ids, so the tree is a pure function of the matrix.
    """
    dist = np.asarray(dist, dtype=float)
    m = dist.shape[0]
    if m < 1:
        raise BlockingError("need at least one dimension")
    work = np.minimum(dist, dist.T)  # tolerate 1-ulp asymmetric input
    np.fill_diagonal(work, np.inf)
    cid = np.arange(m)
    minleaf = np.arange(m)
    merges = []
    for t in range(m - 1):
        dmin = work.min()
        ii, jj = np.nonzero(work == dmin)
        best = None
        best_key = None
        for a, b in zip(ii, jj):
            if a >= b:
                continue
            la, lb = int(minleaf[a]), int(minleaf[b])
            key = (min(la, lb), max(la, lb))
            if best_key is None or key < best_key:
                best_key = key
                best = (int(a), int(b))
        a, b = best
        if minleaf[a] <= minleaf[b]:
            left, right = cid[a], cid[b]
        else:
            left, right = cid[b], cid[a]
        merges.append((int(left), int(right), float(dmin)))
        newrow = np.maximum(work[a], work[b])
        work[a, :] = newrow
        work[:, a] = newrow
        work[a, a] = np.inf
        work[b, :] = np.inf
        work[:, b] = np.inf
        cid[a] = m + t
        minleaf[a] = min(minleaf[a], minleaf[b])
    return Dendrogram(m, merges)


cluster = hclust_complete


def block_containing(dend, k_min, h):
    """Functional form of Dendrogram.block_containing."""
    return dend.block_containing(k_min, h)


def cap_block(block, k_min, corr, cap=BLOCK_CAP):
    """Shrink an oversized block to cap members, keeping those with the
    largest |corr| against the target dimension (ties to lower dim id)."""
    block = tuple(block)
    if len(block) <= cap:
        return tuple(sorted(block))
    ranked = sorted(block, key=lambda j: (-abs(corr[k_min, j]), j))
    return tuple(sorted(ranked[:cap]))
