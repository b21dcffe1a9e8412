#include "chanfuse/estimators.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace chanfuse {

namespace {
const double kInvSqrt2 = 1.0 / std::sqrt(2.0);
}

PilotBlock make_pilots(int m, int t_p, uint64_t seed) {
    if (m < 1 || t_p < 1) throw ConfigError("make_pilots: M and T_p must be >= 1");
    for (int attempt = 0; attempt < 16; ++attempt) {
        std::mt19937_64 rng(mix64(seed + static_cast<uint64_t>(attempt)));
        std::uniform_int_distribution<int> quad(0, 3);
        PilotBlock block;
        block.s.resize(m, t_p);
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < t_p; ++j) {
                int q = quad(rng);
                double re = (q & 1) ? -kInvSqrt2 : kInvSqrt2;
                double im = (q & 2) ? -kInvSqrt2 : kInvSqrt2;
                block.s(i, j) = cxd(re, im);
            }
        }
        if (t_p < m) return block;  // rank condition only applies to LS-capable blocks
        Eigen::FullPivLU<Eigen::MatrixXcd> lu(block.s);
        if (lu.rank() == m) return block;
    }
    throw RankDeficiencyError("make_pilots: could not draw a full-rank pilot block");
}

double noise_variance(const ChannelVector& h, const PilotBlock& s, double snr_db) {
    if (static_cast<int>(h.entries.size()) != s.m())
        throw ShapeError("receive: channel length does not match pilot rows");
    if (std::isinf(snr_db)) return 0.0;
    Eigen::RowVectorXcd y = as_eigen(h).transpose() * s.s;
    double sig_power = y.squaredNorm() / static_cast<double>(s.t_p());
    return sig_power / std::pow(10.0, snr_db / 10.0);
}

RxSignal receive(const ChannelVector& h, const PilotBlock& s, double snr_db, uint64_t seed) {
    Eigen::RowVectorXcd y = as_eigen(h).transpose() * s.s;
    double sigma2 = noise_variance(h, s, snr_db);
    RxSignal rx;
    rx.snr_db = snr_db;
    rx.r = y;
    if (sigma2 > 0.0) {
        std::mt19937_64 rng(mix64(seed));
        std::normal_distribution<double> gauss(0.0, std::sqrt(sigma2 / 2.0));
        for (int j = 0; j < rx.r.cols(); ++j) rx.r(j) += cxd(gauss(rng), gauss(rng));
    }
    return rx;
}

ChannelVector ls_estimate(const RxSignal& rx, const PilotBlock& s) {
    const int m = s.m();
    const int t_p = s.t_p();
    if (rx.r.cols() != t_p) throw ShapeError("ls_estimate: rx length does not match pilots");
    if (t_p < m) throw RankDeficiencyError("ls_estimate: T_p < M, LS is not applicable");
    Eigen::MatrixXcd gram = s.s * s.s.adjoint();  // M x M
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(gram);
    if (lu.rank() < m) throw RankDeficiencyError("ls_estimate: singular pilot Gram matrix");
    // want row vector hr with hr * G = r s^H, i.e. G^T hr^T = (r s^H)^T
    Eigen::VectorXcd rhs = (rx.r * s.s.adjoint()).transpose();
    Eigen::VectorXcd ht = Eigen::FullPivLU<Eigen::MatrixXcd>(gram.transpose()).solve(rhs);
    ChannelVector h;
    h.entries.assign(ht.data(), ht.data() + m);
    return h;
}

ChannelVector lmmse_estimate(const RxSignal& rx, const PilotBlock& s,
                             const Eigen::MatrixXcd& r_h, double sigma2) {
    const int m = s.m();
    const int t_p = s.t_p();
    if (rx.r.cols() != t_p) throw ShapeError("lmmse_estimate: rx length does not match pilots");
    if (r_h.rows() != m || r_h.cols() != m)
        throw ShapeError("lmmse_estimate: covariance must be M x M");
    double scale = std::max(1.0, r_h.cwiseAbs().maxCoeff());
    if ((r_h - r_h.adjoint()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw InvalidCovarianceError("lmmse_estimate: covariance is not Hermitian");
    if (sigma2 < 0.0) throw ConfigError("lmmse_estimate: sigma2 must be >= 0");

    Eigen::MatrixXcd a = s.s.transpose();                          // T_p x M
    Eigen::MatrixXcd inner = a * r_h * a.adjoint();                // T_p x T_p
    inner.diagonal().array() += sigma2;
    Eigen::VectorXcd rt = rx.r.transpose();
    Eigen::LDLT<Eigen::MatrixXcd> ldlt(inner);
    Eigen::VectorXcd w;
    if (ldlt.info() == Eigen::Success) {
        w = ldlt.solve(rt);
    } else {
        // singular when sigma2 = 0 and T_p > rank; fall back to the min-norm solve
        w = Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXcd>(inner).solve(rt);
    }
    Eigen::VectorXcd h_hat = r_h * (a.adjoint() * w);
    ChannelVector h;
    h.entries.assign(h_hat.data(), h_hat.data() + m);
    return h;
}

std::vector<double> xi(const std::vector<cxd>& z) {
    std::vector<double> out;
    out.reserve(z.size() * 2);
    for (const cxd& v : z) out.push_back(v.real());
    for (const cxd& v : z) out.push_back(v.imag());
    return out;
}

std::vector<cxd> xi_inv(const std::vector<double>& x) {
    if (x.size() % 2 != 0)
        throw ShapeError("xi_inv: input length must be even, got " + std::to_string(x.size()));
    size_t n = x.size() / 2;
    std::vector<cxd> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = cxd(x[i], x[n + i]);
    return out;
}

double nmse(const std::vector<cxd>& h_hat, const std::vector<cxd>& h_true) {
    if (h_hat.size() != h_true.size()) throw ShapeError("nmse: length mismatch");
    double err = 0.0, ref = 0.0;
    for (size_t i = 0; i < h_true.size(); ++i) {
        err += std::norm(h_hat[i] - h_true[i]);
        ref += std::norm(h_true[i]);
    }
    if (ref == 0.0) throw ConfigError("nmse: zero-norm reference channel");
    return err / ref;
}

NmseResult nmse(const std::vector<std::vector<cxd>>& h_hat,
                const std::vector<std::vector<cxd>>& h_true) {
    if (h_hat.size() != h_true.size()) throw ShapeError("nmse: sample count mismatch");
    NmseResult res;
    double acc = 0.0;
    for (size_t k = 0; k < h_true.size(); ++k) {
        double ref = 0.0;
        for (const cxd& v : h_true[k]) ref += std::norm(v);
        if (ref == 0.0) {
            ++res.excluded;
            continue;
        }
        acc += nmse(h_hat[k], h_true[k]);
        ++res.used;
    }
    res.value = res.used ? acc / static_cast<double>(res.used) : 0.0;
    return res;
}

Eigen::MatrixXcd empirical_covariance(const std::vector<ChannelVector>& channels) {
    if (channels.empty()) throw ConfigError("empirical_covariance: no channels");
    const int m = static_cast<int>(channels.front().entries.size());
    Eigen::MatrixXcd cov = Eigen::MatrixXcd::Zero(m, m);
    for (const ChannelVector& h : channels) {
        if (static_cast<int>(h.entries.size()) != m)
            throw ShapeError("empirical_covariance: mixed channel lengths");
        Eigen::Map<const Eigen::VectorXcd> v(h.entries.data(), m);
        cov.noalias() += v * v.adjoint();
    }
    cov /= static_cast<double>(channels.size());
    return 0.5 * (cov + cov.adjoint().eval());
}

Eigen::Map<const Eigen::VectorXcd> as_eigen(const ChannelVector& h) {
    return {h.entries.data(), static_cast<Eigen::Index>(h.entries.size())};
}

}  // namespace chanfuse
