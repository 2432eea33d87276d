#include "seqsleep/filterbank.hpp"

#include <cmath>

namespace seqsleep::filterbank {

TriangularShapeMatrix build_triangular_matrix(std::size_t freq_bins, std::size_t filters) {
  if (filters < 1 || filters >= freq_bins) {
    throw UsageError("filterbank: need 1 <= M < F, got M=" + std::to_string(filters) +
                     ", F=" + std::to_string(freq_bins));
  }
  const double spacing = static_cast<double>(freq_bins - 1) / static_cast<double>(filters + 1);
  TriangularShapeMatrix shape;
  shape.values = Matrix::Zero(static_cast<Eigen::Index>(freq_bins),
                              static_cast<Eigen::Index>(filters));
  for (std::size_t m = 0; m < filters; ++m) {
    const double lo = spacing * static_cast<double>(m);
    const double center = spacing * static_cast<double>(m + 1);
    const double hi = spacing * static_cast<double>(m + 2);
    shape.centers.push_back(center);
    auto col = shape.values.col(static_cast<Eigen::Index>(m));
    for (std::size_t f = 0; f < freq_bins; ++f) {
      const double x = static_cast<double>(f);
      double v = 0.0;
      if (x > lo && x <= center) {
        v = (x - lo) / (center - lo);
      } else if (x > center && x < hi) {
        v = (hi - x) / (hi - center);
      }
      col(static_cast<Eigen::Index>(f)) = v;
    }
    const double peak = col.maxCoeff();
    if (peak <= 0.0) {
      // No integer bin inside the support: keep the filter alive at its center.
      col(static_cast<Eigen::Index>(std::lround(center))) = 1.0;
    } else {
      col /= peak;
    }
  }
  return shape;
}

Matrix FilterbankLayer::effective_weights() const {
  return raw_weights->value.unaryExpr([](double x) { return diff::sigmoid(x); })
      .cwiseProduct(shape.values);
}

std::vector<FilterbankLayer> make_layers(diff::ParameterStore& store, const std::string& prefix,
                                         std::size_t channels, std::size_t freq_bins,
                                         std::size_t filters) {
  std::vector<FilterbankLayer> layers;
  const TriangularShapeMatrix shape = build_triangular_matrix(freq_bins, filters);
  for (std::size_t c = 0; c < channels; ++c) {
    FilterbankLayer layer;
    layer.shape = shape;
    layer.channel_index = c;
    layer.raw_weights = &store.add(prefix + std::to_string(c),
                                   Matrix::Zero(static_cast<Eigen::Index>(freq_bins),
                                                static_cast<Eigen::Index>(filters)),
                                   true);
    layers.push_back(std::move(layer));
  }
  return layers;
}

Matrix apply_filterbank(const Matrix& spectrogram, const FilterbankLayer& layer) {
  if (static_cast<std::size_t>(spectrogram.rows()) != layer.shape.freq_bins()) {
    throw ShapeError("apply_filterbank: spectrogram " +
                     shape_string(static_cast<std::size_t>(spectrogram.rows()),
                                  static_cast<std::size_t>(spectrogram.cols())) +
                     " vs filterbank " +
                     shape_string(layer.shape.freq_bins(), layer.shape.filters()));
  }
  if (!spectrogram.allFinite()) throw DataError("apply_filterbank: non-finite spectrogram");
  return layer.effective_weights().transpose() * spectrogram;
}

Matrix filter_and_concat(const tfr::TimeFrequencyImage& image,
                         std::span<const FilterbankLayer> layers) {
  if (layers.size() != image.channels()) {
    throw ShapeError("filter_and_concat: " + std::to_string(layers.size()) + " layers for " +
                     std::to_string(image.channels()) + " channels");
  }
  const auto filters = static_cast<Eigen::Index>(layers.front().shape.filters());
  Matrix out(filters * static_cast<Eigen::Index>(layers.size()),
             static_cast<Eigen::Index>(image.frames()));
  for (std::size_t c = 0; c < layers.size(); ++c) {
    out.middleRows(static_cast<Eigen::Index>(c) * filters, filters) =
        apply_filterbank(image.channel(c), layers[c]);
  }
  return out;
}

diff::Tensor apply_filterbank(diff::Tape& tape, diff::Tensor columns, const FilterbankLayer& layer) {
  diff::Tensor raw = tape.param(*layer.raw_weights);
  diff::Tensor weights = diff::mul(diff::sigmoid(raw), tape.constant(layer.shape.values));
  return diff::matmul(columns, weights);
}

}  // namespace seqsleep::filterbank
