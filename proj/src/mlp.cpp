#include "repose/mlp.hpp"

#include <algorithm>
#include <cmath>

#include "repose/core.hpp"

namespace repose {

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const DenseLayer& l : layers) n += l.weights.size() + l.biases.size();
  return n;
}

MlpParams make_mlp(std::span<const std::size_t> sizes, std::mt19937_64& rng) {
  if (sizes.size() < 2) throw ValidationError("an MLP needs at least input and output sizes");
  MlpParams p;
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
    DenseLayer l;
    l.in = sizes[k];
    l.out = sizes[k + 1];
    if (l.in == 0 || l.out == 0) throw ValidationError("MLP layer sizes must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
    std::uniform_real_distribution<double> init(-limit, limit);
    l.weights.resize(l.in * l.out);
    for (double& w : l.weights) w = init(rng);
    l.biases.assign(l.out, 0.0);
    p.layers.push_back(std::move(l));
  }
  return p;
}

MlpParams zeros_like(const MlpParams& params) {
  MlpParams z = params;
  for (DenseLayer& l : z.layers) {
    std::fill(l.weights.begin(), l.weights.end(), 0.0);
    std::fill(l.biases.begin(), l.biases.end(), 0.0);
  }
  return z;
}

std::vector<double> mlp_forward(const MlpParams& params, std::span<const double> input, MlpTrace& trace) {
  if (params.layers.empty()) throw ValidationError("empty MLP");
  if (input.size() != params.input_dim()) {
    throw ValidationError("MLP input has " + std::to_string(input.size()) + " entries, expected " +
                          std::to_string(params.input_dim()));
  }
  trace.inputs.clear();
  trace.preacts.clear();
  std::vector<double> x(input.begin(), input.end());
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const DenseLayer& l = params.layers[k];
    std::vector<double> z(l.biases);
    for (std::size_t o = 0; o < l.out; ++o) {
      const double* row = l.weights.data() + o * l.in;
      double acc = 0.0;
      for (std::size_t i = 0; i < l.in; ++i) acc += row[i] * x[i];
      z[o] += acc;
    }
    trace.inputs.push_back(std::move(x));
    trace.preacts.push_back(z);
    if (k + 1 < params.layers.size()) {
      for (double& v : z) v = std::max(0.0, v);
    }
    x = std::move(z);
  }
  return x;
}

std::vector<double> mlp_forward(const MlpParams& params, std::span<const double> input) {
  MlpTrace trace;
  return mlp_forward(params, input, trace);
}

void mlp_backward(const MlpParams& params, const MlpTrace& trace, std::span<const double> grad_output,
                  MlpParams& grads) {
  std::vector<double> delta(grad_output.begin(), grad_output.end());
  for (std::size_t k = params.layers.size(); k-- > 0;) {
    const DenseLayer& l = params.layers[k];
    DenseLayer& g = grads.layers[k];
    if (k + 1 < params.layers.size()) {
      const auto& z = trace.preacts[k];
      for (std::size_t o = 0; o < l.out; ++o) {
        if (z[o] <= 0.0) delta[o] = 0.0;
      }
    }
    const auto& x = trace.inputs[k];
    for (std::size_t o = 0; o < l.out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      g.biases[o] += d;
      double* grow = g.weights.data() + o * l.in;
      for (std::size_t i = 0; i < l.in; ++i) grow[i] += d * x[i];
    }
    if (k == 0) break;
    std::vector<double> prev(l.in, 0.0);
    for (std::size_t o = 0; o < l.out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* row = l.weights.data() + o * l.in;
      for (std::size_t i = 0; i < l.in; ++i) prev[i] += row[i] * d;
    }
    delta = std::move(prev);
  }
}

std::vector<double> flatten(const MlpParams& params) {
  std::vector<double> flat;
  flat.reserve(params.parameter_count());
  for (const DenseLayer& l : params.layers) {
    flat.insert(flat.end(), l.weights.begin(), l.weights.end());
    flat.insert(flat.end(), l.biases.begin(), l.biases.end());
  }
  return flat;
}

void assign_flat(MlpParams& params, std::span<const double> flat) {
  if (flat.size() != params.parameter_count()) throw ValidationError("flat parameter size mismatch");
  std::size_t pos = 0;
  for (DenseLayer& l : params.layers) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l.weights.size(), l.weights.begin());
    pos += l.weights.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l.biases.size(), l.biases.begin());
    pos += l.biases.size();
  }
}

void add_scaled(MlpParams& dst, double scale, const MlpParams& src) {
  for (std::size_t k = 0; k < dst.layers.size(); ++k) {
    auto& d = dst.layers[k];
    const auto& s = src.layers[k];
    for (std::size_t i = 0; i < d.weights.size(); ++i) d.weights[i] += scale * s.weights[i];
    for (std::size_t i = 0; i < d.biases.size(); ++i) d.biases[i] += scale * s.biases[i];
  }
}

void scale_in_place(MlpParams& params, double scale) {
  for (DenseLayer& l : params.layers) {
    for (double& w : l.weights) w *= scale;
    for (double& b : l.biases) b *= scale;
  }
}

double squared_norm(const MlpParams& params) {
  double acc = 0.0;
  for (const DenseLayer& l : params.layers) {
    for (double w : l.weights) acc += w * w;
    for (double b : l.biases) acc += b * b;
  }
  return acc;
}

bool all_finite(const MlpParams& params) {
  for (const DenseLayer& l : params.layers) {
    for (double w : l.weights) if (!std::isfinite(w)) return false;
    for (double b : l.biases) if (!std::isfinite(b)) return false;
  }
  return true;
}

}  // namespace repose
