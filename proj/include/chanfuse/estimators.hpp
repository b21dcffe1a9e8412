#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "chanfuse/common.hpp"
#include "chanfuse/scene.hpp"

namespace chanfuse {

/// Unit-power QPSK pilot block, one column per pilot symbol interval.
struct PilotBlock {
    Eigen::MatrixXcd s;  // M x T_p

    int m() const { return static_cast<int>(s.rows()); }
    int t_p() const { return static_cast<int>(s.cols()); }
};

struct RxSignal {
    Eigen::RowVectorXcd r;  // 1 x T_p
    double snr_db = 0.0;
};

/// i.i.d. QPSK entries, deterministic in seed. For T_p >= M the block is
/// redrawn (bounded retries) until it has full row rank.
PilotBlock make_pilots(int m, int t_p, uint64_t seed);

/// Per-symbol noise variance for a transmission of h through s at the given
/// SNR; signal power is the per-entry average over this sample's T_p symbols.
double noise_variance(const ChannelVector& h, const PilotBlock& s, double snr_db);

/// r = h^T s + noise; snr_db = +inf disables the noise entirely.
RxSignal receive(const ChannelVector& h, const PilotBlock& s, double snr_db, uint64_t seed);

/// Least-squares channel estimate r s^H (s s^H)^-1. Needs T_p >= M and a
/// non-singular pilot Gram matrix; throws RankDeficiencyError otherwise.
ChannelVector ls_estimate(const RxSignal& rx, const PilotBlock& s);

/// Linear MMSE estimate R_h A^H (A R_h A^H + sigma2 I)^-1 r^T with A = s^T.
ChannelVector lmmse_estimate(const RxSignal& rx, const PilotBlock& s,
                             const Eigen::MatrixXcd& r_h, double sigma2);

/// Complex -> real stacking: real parts first, then imaginary parts.
std::vector<double> xi(const std::vector<cxd>& z);
std::vector<cxd> xi_inv(const std::vector<double>& x);

struct NmseResult {
    double value = 0.0;
    size_t used = 0;
    size_t excluded = 0;  // zero-norm references, skipped
};

double nmse(const std::vector<cxd>& h_hat, const std::vector<cxd>& h_true);
NmseResult nmse(const std::vector<std::vector<cxd>>& h_hat,
                const std::vector<std::vector<cxd>>& h_true);

/// (1/N) sum h h^H over the given channels, Hermitian-symmetrized.
Eigen::MatrixXcd empirical_covariance(const std::vector<ChannelVector>& channels);

Eigen::Map<const Eigen::VectorXcd> as_eigen(const ChannelVector& h);

}  // namespace chanfuse
