#pragma once

#include "seqsleep/common.hpp"
#include "seqsleep/diff.hpp"
#include "seqsleep/tfr.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace seqsleep::filterbank {

// Linear-frequency triangular shape matrix [F][M] with entries in [0, 1].
// Design centers c_0..c_{M+1} are spaced evenly over [0, F-1]; filter m
// (1-based) rises from c_{m-1} to its peak at c_m and falls to zero at c_{m+1}.
// Each column is scaled so its largest entry is exactly 1.
struct TriangularShapeMatrix {
  Matrix values;
  std::vector<double> centers;  // c_1..c_M in bins

  std::size_t freq_bins() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t filters() const { return static_cast<std::size_t>(values.cols()); }
};

TriangularShapeMatrix build_triangular_matrix(std::size_t freq_bins, std::size_t filters);

// One channel-specific layer. Effective weights are sigmoid(raw) .* shape, so
// they stay non-negative and vanish outside each triangle's support no matter
// what values training drives `raw` to.
struct FilterbankLayer {
  diff::Parameter* raw_weights = nullptr;  // [F][M]
  TriangularShapeMatrix shape;
  std::size_t channel_index = 0;

  Matrix effective_weights() const;
};

// Registers `channels` layers named "<prefix><c>" with raw weights zeroed.
std::vector<FilterbankLayer> make_layers(diff::ParameterStore& store, const std::string& prefix,
                                         std::size_t channels, std::size_t freq_bins,
                                         std::size_t filters);

// X_c = (sigmoid(W) .* T)^T S_c for S_c [F][T]; returns [M][T].
Matrix apply_filterbank(const Matrix& spectrogram, const FilterbankLayer& layer);

// Channel c through layer c, stacked along the frequency axis: [M*C][T].
Matrix filter_and_concat(const tfr::TimeFrequencyImage& image,
                         std::span<const FilterbankLayer> layers);

// Differentiable form over spectral columns laid out as rows: columns [K][F]
// times the layer's effective weights gives [K][M].
diff::Tensor apply_filterbank(diff::Tape& tape, diff::Tensor columns, const FilterbankLayer& layer);

}  // namespace seqsleep::filterbank
