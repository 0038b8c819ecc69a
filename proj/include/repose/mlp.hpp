#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

namespace repose {

/// Fully connected layer, weights stored row-major as out x in.
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;
  std::vector<double> biases;
};

/// Affine layers with a rectifier after every layer but the last.
struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in; }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out; }
  std::size_t parameter_count() const;
};

/// Uniform(+-sqrt(6 / (fan_in + fan_out))) weights, zero biases.
MlpParams make_mlp(std::span<const std::size_t> sizes, std::mt19937_64& rng);

MlpParams zeros_like(const MlpParams& params);

/// Throws ValidationError on a dimension mismatch.
std::vector<double> mlp_forward(const MlpParams& params, std::span<const double> input);

/// Layer inputs and pre-activations recorded by a forward pass.
struct MlpTrace {
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<double>> preacts;
};

std::vector<double> mlp_forward(const MlpParams& params, std::span<const double> input, MlpTrace& trace);

/// Adds d(output . grad_output)/d(params) into `grads`.
void mlp_backward(const MlpParams& params, const MlpTrace& trace, std::span<const double> grad_output,
                  MlpParams& grads);

// Flat views in layer order: weights then biases per layer.
std::vector<double> flatten(const MlpParams& params);
void assign_flat(MlpParams& params, std::span<const double> flat);

/// dst += scale * src
void add_scaled(MlpParams& dst, double scale, const MlpParams& src);
void scale_in_place(MlpParams& params, double scale);
double squared_norm(const MlpParams& params);
bool all_finite(const MlpParams& params);

}  // namespace repose
