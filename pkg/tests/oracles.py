"""Independent reference computations shared by the test modules."""

import numpy as np


def dense_flow_rate(alpha_cells, tau, n):
    """Assemble the interior flow-rate system as a full matrix and solve it."""
    dchi = 1.0 / n
    q = np.zeros((n + 1, alpha_cells.shape[1]))
    m = n - 1
    mat = np.eye(m) - 0.5 * (np.eye(m, k=1) + np.eye(m, k=-1))
    for k in range(1, alpha_cells.shape[1]):
        dt = tau[k] - tau[k - 1]
        rhs = np.array([
            dchi / (2 * dt) * (alpha_cells[i, k] - alpha_cells[i - 1, k] - alpha_cells[i, k - 1] + alpha_cells[i - 1, k - 1])
            for i in range(1, n)
        ])
        q[1:-1, k] = np.linalg.solve(mat, rhs)
    q[:, 0] = q[:, 1]
    return q


def dense_pressure(q, alpha_cells, alpha_nodes, pd, phi, tau, n):
    """Interior pressure rows written out term by term, solved densely."""
    dchi = 1.0 / n
    p = np.zeros((n + 1, q.shape[1]))
    for k in range(q.shape[1]):
        kk = max(k, 1)
        dt = tau[kk] - tau[kk - 1]
        qo = q[:, k - 1] if k > 0 else q[:, 0]
        mat = np.zeros((n, n))
        rhs = np.zeros(n)
        mat[0, 0], mat[0, 1] = 1.0, -1.0
        for i in range(1, n):
            a_r, a_l = alpha_cells[i, k], alpha_cells[i - 1, k]
            mat[i, i] = a_r + a_l
            mat[i, i - 1] = -a_l
            flux = q[:, k] ** 2 / alpha_nodes[:, k]
            g = q[:, k] / alpha_nodes[:, k]
            rhs[i] = (dchi / (2 * dt) * (q[i + 1, k] - q[i - 1, k] - qo[i + 1] + qo[i - 1])
                      + flux[i + 1] + flux[i - 1] - 2 * flux[i]
                      + 0.5 * phi * dchi * (g[i + 1] - g[i - 1]))
            if i + 1 < n:
                mat[i, i + 1] = -a_r
            else:
                rhs[i] += a_r * pd[k]
        p[:-1, k] = np.linalg.solve(mat, rhs)
        p[-1, k] = pd[k]
    return p


def numeric_gradients(loss_fn, params, h=1e-5):
    """Central differences of ``loss_fn()`` for every entry of every array in ``params``.

    ``params`` maps a name to an array that ``loss_fn`` reads by reference.
    """
    out = {}
    for key, w in params.items():
        g = np.zeros_like(w)
        flat, gflat = w.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn()
            flat[i] = old - h
            down = loss_fn()
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        out[key] = g
    return out


def relative_error(a, b):
    """Norm-relative difference of two gradient arrays."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def vae_gradient_errors(model, x, eps, beta):
    """Per-array relative error between backprop and central differences."""
    model.loss_and_grads(x, eps, beta)
    analytic = {key: layer.grads[name].copy() for key, layer, name in model.parameters()}
    params = {key: layer.params[name] for key, layer, name in model.parameters()}
    numeric = numeric_gradients(lambda: model.loss_and_grads(x, eps, beta)[0], params)
    return {k: relative_error(analytic[k], numeric[k]) for k in analytic}


def worknet_gradient_errors(net, x, y):
    net.loss_and_grads(x, y)
    analytic = {key: layer.grads[name].copy() for key, layer, name in net.parameters()}
    params = {key: layer.params[name] for key, layer, name in net.parameters()}
    numeric = numeric_gradients(lambda: net.loss_and_grads(x, y), params)
    return {k: relative_error(analytic[k], numeric[k]) for k in analytic}


def randomize_biases(model, rng, scale=0.1):
    """Move biases off zero so no pre-activation sits exactly on a ReLU hinge."""
    for _, layer, name in model.parameters():
        if name == "b":
            layer.params[name][...] = rng.normal(0, scale, layer.params[name].shape)
    return model
