"""Pure numpy versions of the compiled kernels (same signatures and results)."""
import numpy as np


def peierls_apply(psi, links, coeffs, inv_dx2, diag, out):
    """out = -1/2 sum_k inv_dx2[k] (c0 psi + sum_j c_j (T_k^j + T_k^-j) psi) + diag * psi."""
    acc = np.zeros_like(psi)
    for k in range(3):
        u = links[k]
        uc = np.conj(u)
        part = coeffs[0] * psi
        fwd = psi
        bwd = psi
        for j in range(1, len(coeffs)):
            fwd = u * np.roll(fwd, -1, axis=k)
            bwd = np.roll(uc * bwd, 1, axis=k)
            part = part + coeffs[j] * (fwd + bwd)
        acc += (-0.5 * inv_dx2[k]) * part
    if diag is not None and diag.size:
        acc += diag * psi
    out[...] = acc
    return out


def biot_savart(points, nodes, dl, out, chunk=2048):
    """out[i] = sum_m dl[m] x (p_i - q_m) / |p_i - q_m|^3."""
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk]
        d = p[:, None, :] - nodes[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", d, d)
        w = r2 ** -1.5
        cr = np.cross(np.broadcast_to(dl, d.shape), d)
        out[s:s + chunk] = np.einsum("ijk,ij->ik", cr, w)
    return out
