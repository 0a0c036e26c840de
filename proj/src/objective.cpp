#include "ptmap/objective.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "ptmap/log.hpp"

namespace ptmap {

namespace {

void finish_cache(DesignCache& c) {
    c.T = cumsum_matrix(c.p());
    c.bT = c.b * c.T;
    c.PmonT = c.P_mon * c.T;
    c.PtP_non = c.P_non.transpose() * c.P_non;
    c.PtP_cross = c.P_non.transpose() * c.P_mon;
    c.PtP_mon = c.P_mon.transpose() * c.P_mon;
}

Eigen::VectorXd cumsum(const Eigen::VectorXd& raw) {
    Eigen::VectorXd out(raw.size());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < raw.size(); ++i) out[i] = acc += raw[i];
    return out;
}

Eigen::VectorXd raw_from_coefficients(const Eigen::VectorXd& beta) {
    Eigen::VectorXd raw(beta.size());
    raw[0] = beta[0];
    for (Eigen::Index i = 1; i < beta.size(); ++i) raw[i] = beta[i] - beta[i - 1];
    return raw;
}

// Cholesky of a matrix that is positive definite in exact arithmetic. Large
// barrier weights can push rounding above the ridge; retry with a diagonal shift
// relative to the largest diagonal entry.
Eigen::LLT<Eigen::MatrixXd> robust_llt(const Eigen::MatrixXd& H) {
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    if (llt.info() == Eigen::Success) return llt;
    const double scale = H.diagonal().cwiseAbs().maxCoeff();
    for (double rel = 1e-14; rel <= 1e-8; rel *= 100) {
        llt.compute(H + rel * scale * Eigen::MatrixXd::Identity(H.rows(), H.cols()));
        if (llt.info() == Eigen::Success) {
            log().debug("penalized Hessian needed a relative diagonal shift of {}", rel);
            return llt;
        }
    }
    throw FitError("penalized Hessian is not positive definite");
}

void check_log_lambdas(const DesignCache& cache, const Eigen::VectorXd& log_lambdas) {
    if (log_lambdas.size() != cache.num_blocks())
        throw std::invalid_argument("expected " + std::to_string(cache.num_blocks()) + " log-lambdas, got " +
                                    std::to_string(log_lambdas.size()));
}

Eigen::VectorXd barrier_arguments(const DesignCache& cache, const Eigen::VectorXd& raw) {
    Eigen::VectorXd s = cache.bT * raw;
    if (!(s.minCoeff() > 0.0)) throw FitError("log barrier violated: nonpositive derivative at a sample");
    return s;
}

// Block gram embedded in full (beta_non, raw) coordinates, unscaled.
Eigen::MatrixXd embedded_gram(const DesignCache& cache, int block) {
    const int dim = cache.dim();
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(dim, dim);
    const int off = cache.block_offsets[block];
    const int size = cache.block_sizes[block];
    if (block + 1 < cache.num_blocks()) {
        G.block(off, off, size, size) = cache.grams[block];
    } else {
        G.block(off, off, size, size) = cache.T.transpose() * cache.grams[block] * cache.T;
    }
    return G;
}

std::vector<int> free_indices(const std::vector<bool>& free) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < free.size(); ++i)
        if (free[i]) idx.push_back(static_cast<int>(i));
    return idx;
}

Eigen::MatrixXd restrict(const Eigen::MatrixXd& M, const std::vector<int>& idx) {
    return M(idx, idx);
}

// Square-root factor M of the unpenalized Hessian (H = M^T M) restricted to the
// free coordinates, and the penalized Hessian built from it. Working with M
// rather than a formed P^T P keeps the trace accurate along the shared-constant
// direction, which only the ridge holds.
struct Factors {
    Eigen::MatrixXd M;       // 2n x |F|
    Eigen::MatrixXd gram;    // M^T M
    Eigen::MatrixXd penalized;
    Eigen::MatrixXd pen;     // penalty restricted to F
    Eigen::VectorXd s;
};

Factors factor(const PenalizedSystem& system, const Eigen::VectorXd& raw, const std::vector<int>& F) {
    const auto& c = system.cache();
    const int n = c.n(), m = c.m();
    Factors f;
    f.s = barrier_arguments(c, raw);
    f.M = Eigen::MatrixXd::Zero(2 * n, static_cast<Eigen::Index>(F.size()));
    for (std::size_t k = 0; k < F.size(); ++k) {
        const int i = F[k];
        if (i < m) {
            f.M.col(k).head(n) = c.P_non.col(i);
        } else {
            f.M.col(k).head(n) = c.PmonT.col(i - m);
            f.M.col(k).tail(n) = c.bT.col(i - m).cwiseQuotient(f.s);
        }
    }
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(c.dim(), c.dim());
    S.topLeftCorner(m, m) = system.S_non();
    S.bottomRightCorner(c.p(), c.p()) = c.T.transpose() * system.S_mon() * c.T;
    const auto nf = static_cast<Eigen::Index>(F.size());
    Eigen::MatrixXd lower = Eigen::MatrixXd::Zero(nf, nf);
    lower.selfadjointView<Eigen::Lower>().rankUpdate(f.M.transpose());
    f.gram = lower.selfadjointView<Eigen::Lower>();
    f.pen = restrict(S, F);
    f.penalized = f.gram + f.pen;
    return f;
}

struct Analysis {
    EdfResult edf;
    Eigen::VectorXd gradient;  // d(outer)/d(log lambda), only when requested
};

Analysis analyze(const PenalizedSystem& system, const InnerSolution& sol, bool with_gradient) {
    const auto& c = system.cache();
    const int m = c.m();
    const std::vector<int> F = free_indices(sol.free);
    const Factors fac = factor(system, sol.raw, F);
    const Eigen::MatrixXd& HP = fac.penalized;

    Eigen::LLT<Eigen::MatrixXd> llt = robust_llt(HP);
    const auto nf = static_cast<Eigen::Index>(F.size());
    // The edf values use the factored form ||L^{-1} M^T||^2, which is more
    // accurate than the trace of Hinv M^T M; the gradient uses the latter.
    Analysis out;
    out.edf.total = llt.matrixL().solve(fac.M.transpose()).squaredNorm();
    out.edf.per_block.resize(c.num_blocks());
    for (int blk = 0; blk < c.num_blocks(); ++blk) {
        std::vector<int> local;
        for (Eigen::Index k = 0; k < nf; ++k) {
            const int i = F[k];
            if (i >= c.block_offsets[blk] && i < c.block_offsets[blk] + c.block_sizes[blk])
                local.push_back(static_cast<int>(k));
        }
        if (local.empty()) {
            out.edf.per_block[blk] = 0.0;
            continue;
        }
        Eigen::LLT<Eigen::MatrixXd> blk_llt = robust_llt(HP(local, local));
        Eigen::MatrixXd Mb(fac.M.rows(), static_cast<Eigen::Index>(local.size()));
        for (std::size_t k = 0; k < local.size(); ++k) Mb.col(k) = fac.M.col(local[k]);
        out.edf.per_block[blk] = blk_llt.matrixL().solve(Mb.transpose()).squaredNorm();
    }
    const int n = c.n();
    const double e = out.edf.total;
    if (!with_gradient || !(n - e - 1.0 > 0.0)) return out;

    const double dpen = aicc_penalty_derivative(e, n);

    // Gradient of the unpenalized objective in full coordinates.
    const Eigen::VectorXd beta_mon = cumsum(sol.raw);
    const Eigen::VectorXd residual = c.P_non * sol.beta_non + c.P_mon * beta_mon;
    Eigen::VectorXd grad_full(c.dim());
    grad_full.head(m) = c.P_non.transpose() * residual;
    grad_full.tail(c.p()) = c.PmonT.transpose() * residual - c.bT.transpose() * fac.s.cwiseInverse();

    // d edf / d r_k = -2 sum_i (c_i^T E c_i) c_ik / s_i^3 with
    // E = Hinv - Hinv H Hinv = Hinv S Hinv (S the restricted penalty).
    std::vector<int> raw_local, raw_global;
    for (Eigen::Index k = 0; k < nf; ++k) {
        if (F[k] >= m) {
            raw_local.push_back(static_cast<int>(k));
            raw_global.push_back(F[k] - m);
        }
    }
    const Eigen::MatrixXd Hinv = llt.solve(Eigen::MatrixXd::Identity(nf, nf));
    const Eigen::MatrixXd HinvGram = llt.solve(fac.gram);
    const Eigen::MatrixXd E = Hinv * fac.pen * Hinv;
    const auto nr = static_cast<Eigen::Index>(raw_local.size());
    Eigen::MatrixXd Cr(nr, n);  // raw rows of the c_i
    for (Eigen::Index k = 0; k < nr; ++k) Cr.row(k) = c.bT.col(raw_global[k]).transpose();
    const Eigen::MatrixXd Err = E(raw_local, raw_local);
    const Eigen::VectorXd q = ((Err * Cr).array() * Cr.array()).colwise().sum().transpose();
    const Eigen::VectorXd weights = (-2.0 * q.array() / fac.s.array().cube()).matrix();
    Eigen::VectorXd dedf = Eigen::VectorXd::Zero(nf);
    const Eigen::VectorXd dedf_raw = Cr * weights;
    for (Eigen::Index k = 0; k < nr; ++k) dedf[raw_local[k]] = dedf_raw[k];

    Eigen::VectorXd g_outer(nf);
    for (int k = 0; k < nf; ++k) g_outer[k] = grad_full[F[k]];
    g_outer += dpen * dedf;
    const Eigen::VectorXd v = llt.solve(g_outer);

    const Eigen::MatrixXd W = HinvGram * Hinv;  // Hinv H Hinv
    Eigen::VectorXd theta(c.dim());
    theta << sol.beta_non, sol.raw;
    out.gradient.resize(c.num_blocks());
    for (int blk = 0; blk < c.num_blocks(); ++blk) {
        const double lam = std::exp(system.log_lambdas()[blk]);
        const Eigen::MatrixXd Gfull = embedded_gram(c, blk);
        const Eigen::MatrixXd G = restrict(Gfull, F);
        const double dedf_lam = -lam * (G.array() * W.array()).sum();
        const Eigen::VectorXd Gtheta = Gfull * theta;
        Eigen::VectorXd cross(nf);
        for (int k = 0; k < nf; ++k) cross[k] = lam * Gtheta[F[k]];
        out.gradient[blk] = dpen * dedf_lam - v.dot(cross);
    }
    return out;
}

}  // namespace

DesignCache make_design_cache(const MapComponent& component, const Eigen::MatrixXd& data, double ridge) {
    const auto n = data.rows();
    if (data.cols() <= component.index()) throw std::invalid_argument("data has too few columns");
    DesignCache c;
    c.ridge = ridge;
    c.P_non.resize(n, component.num_nonmonotone());
    for (std::size_t k = 0; k < component.parents().size(); ++k) {
        const auto& basis = component.parent_bases()[k];
        const Eigen::VectorXd col = data.col(component.parents()[k]);
        c.P_non.middleCols(component.parent_offset(k), basis.size()) =
            basis.eval_matrix(std::span<const double>(col.data(), static_cast<std::size_t>(n)));
        c.grams.push_back(make_penalty(basis.size()).gram);
        c.block_offsets.push_back(component.parent_offset(k));
        c.block_sizes.push_back(basis.size());
    }
    const auto& mb = component.monotone_basis();
    const Eigen::VectorXd col = data.col(component.index());
    const std::span<const double> xs(col.data(), static_cast<std::size_t>(n));
    c.P_mon = mb.eval_matrix(xs);
    c.b = mb.deriv_matrix(xs);
    c.grams.push_back(make_penalty(mb.size()).gram);
    c.block_offsets.push_back(component.num_nonmonotone());
    c.block_sizes.push_back(mb.size());
    c.identity_raw = raw_from_coefficients(mb.greville());
    finish_cache(c);
    return c;
}

DesignCache make_design_cache(Eigen::MatrixXd P_non, Eigen::MatrixXd P_mon, Eigen::MatrixXd b,
                              std::vector<int> parent_block_sizes, Eigen::VectorXd identity_raw, double ridge) {
    DesignCache c;
    c.ridge = ridge;
    c.P_non = std::move(P_non);
    c.P_mon = std::move(P_mon);
    c.b = std::move(b);
    int off = 0;
    for (int size : parent_block_sizes) {
        c.grams.push_back(make_penalty(size).gram);
        c.block_offsets.push_back(off);
        c.block_sizes.push_back(size);
        off += size;
    }
    if (off != c.P_non.cols()) throw std::invalid_argument("parent block sizes do not match P_non");
    c.grams.push_back(make_penalty(static_cast<int>(c.P_mon.cols())).gram);
    c.block_offsets.push_back(off);
    c.block_sizes.push_back(static_cast<int>(c.P_mon.cols()));
    c.identity_raw = std::move(identity_raw);
    finish_cache(c);
    return c;
}

double nll(const DesignCache& cache, const Eigen::VectorXd& beta_non, const Eigen::VectorXd& raw) {
    const Eigen::VectorXd s = barrier_arguments(cache, raw);
    const Eigen::VectorXd z = cache.P_non * beta_non + cache.PmonT * raw;
    return 0.5 * z.squaredNorm() - s.array().log().sum();
}

double penalized_objective(const DesignCache& cache, const Eigen::VectorXd& log_lambdas,
                           const Eigen::VectorXd& beta_non, const Eigen::VectorXd& raw) {
    const PenalizedSystem system(cache, log_lambdas);
    const Eigen::VectorXd beta_mon = cumsum(raw);
    return nll(cache, beta_non, raw) + 0.5 * beta_non.dot(system.S_non() * beta_non) +
           0.5 * beta_mon.dot(system.S_mon() * beta_mon);
}

PenalizedSystem::PenalizedSystem(const DesignCache& cache, const Eigen::VectorXd& log_lambdas)
    : cache_(&cache), log_lambdas_(log_lambdas) {
    check_log_lambdas(cache, log_lambdas);
    const int m = cache.m(), p = cache.p();
    const int mono = cache.num_blocks() - 1;

    S_non_ = cache.ridge * Eigen::MatrixXd::Identity(m, m);
    for (int blk = 0; blk < mono; ++blk) {
        const int off = cache.block_offsets[blk], size = cache.block_sizes[blk];
        S_non_.block(off, off, size, size) += std::exp(log_lambdas[blk]) * cache.grams[blk];
    }
    S_mon_ = std::exp(log_lambdas[mono]) * cache.grams[mono] + cache.ridge * Eigen::MatrixXd::Identity(p, p);

    Eigen::MatrixXd Q;
    if (m > 0) {
        normal_ = robust_llt(cache.PtP_non + S_non_);
        // D = M P_mon with M = (P^T P + S)^{-1} P^T, and A = (I - P M) P_mon.
        const Eigen::MatrixXd D = normal_.solve(cache.PtP_cross);
        const Eigen::MatrixXd A = cache.P_mon - cache.P_non * D;
        Q = A.transpose() * A + D.transpose() * S_non_ * D + S_mon_;
    } else {
        Q = cache.PtP_mon + S_mon_;
    }
    Q_raw_ = cache.T.transpose() * Q * cache.T;
    Q_raw_ = 0.5 * (Q_raw_ + Q_raw_.transpose()).eval();
}

Eigen::VectorXd PenalizedSystem::solve_non(const Eigen::VectorXd& raw) const {
    const auto& c = *cache_;
    if (c.m() == 0) return Eigen::VectorXd(0);
    return -normal_.solve(c.PtP_cross * (c.T * raw));
}

Eigen::VectorXd solve_non_closed_form(const DesignCache& cache, const Eigen::VectorXd& log_lambdas,
                                      const Eigen::VectorXd& raw) {
    return PenalizedSystem(cache, log_lambdas).solve_non(raw);
}

ReducedObjective reduced_penalized_objective(const PenalizedSystem& system, const Eigen::VectorXd& raw,
                                             bool with_hessian) {
    const auto& c = system.cache();
    const Eigen::VectorXd s = barrier_arguments(c, raw);
    const Eigen::VectorXd Qr = system.reduced_quadratic() * raw;
    ReducedObjective out;
    out.value = 0.5 * raw.dot(Qr) - s.array().log().sum();
    out.gradient = Qr - c.bT.transpose() * s.cwiseInverse();
    if (with_hessian) {
        const Eigen::VectorXd w = s.array().square().inverse();
        out.hessian = system.reduced_quadratic() + c.bT.transpose() * w.asDiagonal() * c.bT;
    }
    return out;
}

ReducedObjective reduced_penalized_objective(const DesignCache& cache, const Eigen::VectorXd& log_lambdas,
                                             const Eigen::VectorXd& raw) {
    return reduced_penalized_objective(PenalizedSystem(cache, log_lambdas), raw, true);
}

namespace {

// Projected-gradient level treated as converged: the requested relative
// tolerance, or the rounding-error bound of the gradient evaluation when that is
// larger (heavy penalties make Q r cancel against the barrier term).
double stopping_level(const PenalizedSystem& system, const Eigen::VectorXd& raw, const ReducedObjective& cur,
                      const InnerOptions& options) {
    const auto& c = system.cache();
    const Eigen::VectorXd s = c.bT * raw;
    const Eigen::VectorXd bound = system.reduced_quadratic().cwiseAbs() * raw.cwiseAbs() +
                                  c.bT.cwiseAbs().transpose() * s.cwiseAbs().cwiseInverse();
    const double noise = 64.0 * std::numeric_limits<double>::epsilon() * bound.norm();
    return std::max(options.tolerance * std::max(1.0, std::abs(cur.value)), noise);
}

}  // namespace

InnerSolution solve_inner(const PenalizedSystem& system, const std::optional<Eigen::VectorXd>& warm_raw,
                          const InnerOptions& options) {
    const auto& c = system.cache();
    const int p = c.p();

    auto feasible = [&](const Eigen::VectorXd& r) {
        return r.size() == p && (c.bT * r).minCoeff() > 0.0;
    };
    Eigen::VectorXd raw = c.identity_raw;
    if (warm_raw && warm_raw->size() == p) {
        Eigen::VectorXd w = *warm_raw;
        for (int i = 1; i < p; ++i) w[i] = std::max(0.0, w[i]);
        if (feasible(w)) raw = w;
    }
    if (!feasible(raw)) throw FitError("no feasible starting point for the monotone coefficients");

    auto project = [](Eigen::VectorXd& r) {
        for (Eigen::Index i = 1; i < r.size(); ++i) r[i] = std::max(0.0, r[i]);
    };

    InnerSolution sol;
    ReducedObjective cur = reduced_penalized_objective(system, raw, true);
    for (int iter = 0; iter < options.max_iterations; ++iter) {
        const Eigen::VectorXd& g = cur.gradient;
        Eigen::VectorXd pg = g;
        for (int i = 1; i < p; ++i) pg[i] = raw[i] - std::max(0.0, raw[i] - g[i]);
        sol.projected_gradient_norm = pg.norm();
        sol.iterations = iter;
        if (sol.projected_gradient_norm <= stopping_level(system, raw, cur, options)) {
            sol.converged = true;
            break;
        }

        // Bertsekas-style active set: near-bound increments pushed outward.
        const double eps = std::min(1e-6, sol.projected_gradient_norm);
        std::vector<int> free, active;
        for (int i = 0; i < p; ++i) {
            if (i > 0 && raw[i] <= eps && g[i] > 0.0) active.push_back(i);
            else free.push_back(i);
        }
        Eigen::VectorXd dir = Eigen::VectorXd::Zero(p);
        if (!free.empty()) {
            // A relative shift keeps steps bounded along directions held only by
            // the ridge (the level shared with parent constants).
            const Eigen::MatrixXd Hf = cur.hessian(free, free);
            const double scale = Hf.diagonal().cwiseAbs().maxCoeff();
            const Eigen::VectorXd gf = g(free);
            Eigen::VectorXd df = -gf;
            for (double rel = 1e-12; rel <= 1e-4; rel *= 100) {
                Eigen::LLT<Eigen::MatrixXd> llt(Hf + rel * scale * Eigen::MatrixXd::Identity(Hf.rows(), Hf.cols()));
                if (llt.info() == Eigen::Success) {
                    df = -llt.solve(gf);
                    break;
                }
            }
            dir(free) = df;
        }
        for (int i : active) dir[i] = -g[i] / cur.hessian(i, i);

        // Once the predicted decrease is below the rounding level of the value,
        // Armijo cannot discriminate; accept on a smaller projected gradient instead.
        const double noise = 1e-12 * std::max(1.0, std::abs(cur.value));
        double alpha = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
            Eigen::VectorXd cand = raw + alpha * dir;
            project(cand);
            if ((cand - raw).norm() <= 1e-15 * (1.0 + raw.norm())) break;
            if (!feasible(cand)) continue;
            const double decrease = g.dot(cand - raw);
            const ReducedObjective trial = reduced_penalized_objective(system, cand, false);
            bool ok = trial.value <= cur.value + 1e-4 * decrease;
            if (!ok && std::abs(decrease) <= noise && trial.value <= cur.value + 10 * noise) {
                Eigen::VectorXd tpg = trial.gradient;
                for (int i = 1; i < p; ++i) tpg[i] = cand[i] - std::max(0.0, cand[i] - trial.gradient[i]);
                ok = tpg.norm() < sol.projected_gradient_norm;
            }
            if (ok) {
                raw = cand;
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            log().debug("inner solve: line search stalled at |pg|={}", sol.projected_gradient_norm);
            break;
        }
        cur = reduced_penalized_objective(system, raw, true);
        sol.iterations = iter + 1;
        log().trace("inner {}: value {:.12g} |pg| {:.3g} alpha {} active {}", iter, cur.value,
                    sol.projected_gradient_norm, alpha, active.size());
    }
    if (!sol.converged) {
        // Re-check at the final iterate.
        Eigen::VectorXd pg = cur.gradient;
        for (int i = 1; i < p; ++i) pg[i] = raw[i] - std::max(0.0, raw[i] - cur.gradient[i]);
        sol.projected_gradient_norm = pg.norm();
        sol.converged = sol.projected_gradient_norm <= stopping_level(system, raw, cur, options);
    }

    sol.raw = raw;
    sol.beta_non = system.solve_non(raw);
    sol.penalized_value = cur.value;
    sol.free.assign(c.dim(), true);
    for (int i = 1; i < p; ++i) {
        if (raw[i] <= 0.0 && cur.gradient[i] > 0.0) sol.free[c.m() + i] = false;
    }
    return sol;
}

EdfResult edf(const PenalizedSystem& system, const InnerSolution& solution) {
    return analyze(system, solution, false).edf;
}

EdfResult edf(const DesignCache& cache, const Eigen::VectorXd& beta_non, const Eigen::VectorXd& raw,
              const Eigen::VectorXd& log_lambdas) {
    const PenalizedSystem system(cache, log_lambdas);
    InnerSolution sol;
    sol.beta_non = beta_non;
    sol.raw = raw;
    sol.free.assign(cache.dim(), true);
    return analyze(system, sol, false).edf;
}

double aicc_penalty(double edf, int n) {
    const double denom = n - edf - 1.0;
    if (!(denom > 0.0))
        throw ModelTooComplex("edf " + std::to_string(edf) + " too large for " + std::to_string(n) + " samples");
    return edf + edf * (edf + 1.0) / denom;
}

double aicc_penalty_derivative(double edf, int n) {
    const double denom = n - edf - 1.0;
    if (!(denom > 0.0))
        throw ModelTooComplex("edf " + std::to_string(edf) + " too large for " + std::to_string(n) + " samples");
    return 1.0 + ((2.0 * edf + 1.0) * denom + edf * (edf + 1.0)) / (denom * denom);
}

OuterEvaluation outer_objective(const DesignCache& cache, const Eigen::VectorXd& log_lambdas,
                                const std::optional<Eigen::VectorXd>& warm_raw, bool with_gradient,
                                const InnerOptions& inner) {
    const PenalizedSystem system(cache, log_lambdas);
    OuterEvaluation out;
    out.solution = solve_inner(system, warm_raw, inner);
    if (!out.solution.converged)
        log().debug("inner solve not converged (|pg|={})", out.solution.projected_gradient_norm);

    auto& r = out.report;
    r.nll = nll(cache, out.solution.beta_non, out.solution.raw);
    r.log_lambdas = log_lambdas;
    r.inner_iterations = out.solution.iterations;
    r.num_samples = cache.n();
    r.num_parameters = cache.dim();
    r.ridge = cache.ridge;
    for (bool f : out.solution.free) r.num_pinned += f ? 0 : 1;

    Analysis a = analyze(system, out.solution, with_gradient);
    r.edf = a.edf.total;
    r.block_edf = a.edf.per_block;
    r.aicc = r.nll + aicc_penalty(r.edf, cache.n());
    out.aicc = r.aicc;
    out.gradient = std::move(a.gradient);
    return out;
}

Eigen::VectorXd outer_gradient(const DesignCache& cache, const Eigen::VectorXd& log_lambdas,
                               const std::optional<Eigen::VectorXd>& warm_raw, const InnerOptions& inner) {
    return outer_objective(cache, log_lambdas, warm_raw, true, inner).gradient;
}

OuterEvaluation adapt(const DesignCache& cache, const AdaptOptions& options,
                      const std::optional<Eigen::VectorXd>& start, const std::optional<Eigen::VectorXd>& warm_raw) {
    const int nb = cache.num_blocks();
    Eigen::VectorXd rho = Eigen::VectorXd::Constant(nb, options.initial_log_lambda);
    if (options.fixed_monotone) rho[nb - 1] = options.fixed_monotone_log_lambda;
    if (start) {
        if (start->size() != nb) throw std::invalid_argument("warm-start log-lambdas have the wrong size");
        rho = *start;
        if (options.fixed_monotone) rho[nb - 1] = options.fixed_monotone_log_lambda;
    }
    std::vector<int> active;
    for (int b = 0; b < nb; ++b)
        if (!(options.fixed_monotone && b == nb - 1)) active.push_back(b);
    const double bound = options.log_lambda_bound;
    for (int b : active) rho[b] = std::clamp(rho[b], -bound, bound);

    auto evaluate = [&](const Eigen::VectorXd& at, const std::optional<Eigen::VectorXd>& warm) {
        return outer_objective(cache, at, warm, true, options.inner);
    };

    OuterEvaluation cur = evaluate(rho, warm_raw);
    const int k = static_cast<int>(active.size());
    Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(k, k);
    Eigen::VectorXd g = cur.gradient(active);
    int iter = 0;
    bool converged = g.norm() <= options.gradient_tolerance;
    bool scaled = false;
    while (!converged && iter < options.max_outer_iterations && k > 0) {
        ++iter;
        Eigen::VectorXd dir = scaled ? Eigen::VectorXd(-Hinv * g) : Eigen::VectorXd(-g / g.norm());
        if (dir.dot(g) >= 0.0) {
            Hinv.setIdentity();
            dir = -g;
        }
        if (dir.norm() > options.max_step) dir *= options.max_step / dir.norm();

        double alpha = 1.0;
        std::optional<OuterEvaluation> next;
        for (int ls = 0; ls < 30; ++ls, alpha *= 0.5) {
            Eigen::VectorXd trial = rho;
            for (int i = 0; i < k; ++i)
                trial[active[i]] = std::clamp(rho[active[i]] + alpha * dir[i], -bound, bound);
            const double moved = (trial - rho).norm();
            if (moved == 0.0) break;
            try {
                OuterEvaluation cand = evaluate(trial, cur.solution.raw);
                const double decrease = g.dot(trial(active) - rho(active));
                if (cand.aicc <= cur.aicc + 1e-4 * decrease) {
                    next = std::move(cand);
                    break;
                }
            } catch (const FitError& e) {
                log().debug("outer trial at alpha={} failed: {}", alpha, e.what());
            }
        }
        if (!next) {
            log().debug("outer {}: line search failed at |g| {:.3g}", iter, g.norm());
            break;
        }

        const Eigen::VectorXd step = next->report.log_lambdas(active) - rho(active);
        const Eigen::VectorXd g_next = next->gradient(active);
        const Eigen::VectorXd y = g_next - g;
        const double sy = step.dot(y);
        if (sy > 1e-12) {
            if (!scaled) {
                Hinv *= sy / y.squaredNorm();
                scaled = true;
            }
            const double r = 1.0 / sy;
            const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(k, k);
            Hinv = (I - r * step * y.transpose()) * Hinv * (I - r * y * step.transpose()) + r * step * step.transpose();
        }
        const double change = std::abs(next->aicc - cur.aicc);
        log().debug("outer {}: aicc {:.10g} -> {:.10g}, alpha {}, |g| {:.3g}", iter, cur.aicc, next->aicc, alpha,
                    g_next.norm());
        rho = next->report.log_lambdas;
        cur = std::move(*next);
        g = g_next;
        if (g.norm() <= options.gradient_tolerance || change <= options.value_tolerance) converged = true;
    }
    cur.report.outer_iterations = iter;
    cur.report.converged = converged;
    cur.report.grad_norm = g.norm();
    return cur;
}

}  // namespace ptmap
