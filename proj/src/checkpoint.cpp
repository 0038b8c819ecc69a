#include "repose/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <sstream>

#include "json.hpp"
#include "repose/io.hpp"
#include "repose/serialization.hpp"

namespace repose {

using nlohmann::json;

namespace {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex;
  ss.width(16);
  ss.fill('0');
  ss << v;
  return ss.str();
}

void put_double(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xff));
}

double get_double(std::string_view in, std::size_t offset) {
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + k])) << (8 * k);
  }
  return std::bit_cast<double>(bits);
}

json shapes(const MlpParams& p) {
  json s = json::array();
  for (const DenseLayer& l : p.layers) s.push_back({l.in, l.out});
  return s;
}

MlpParams shell_from_shapes(const json& s) {
  MlpParams p;
  for (const json& layer : s) {
    DenseLayer l;
    l.in = layer.at(0).get<std::size_t>();
    l.out = layer.at(1).get<std::size_t>();
    if (l.in == 0 || l.out == 0) throw ValidationError("corrupt checkpoint: zero layer dimension");
    l.weights.resize(l.in * l.out);
    l.biases.resize(l.out);
    p.layers.push_back(std::move(l));
  }
  for (std::size_t k = 1; k < p.layers.size(); ++k) {
    if (p.layers[k].in != p.layers[k - 1].out) throw ValidationError("corrupt checkpoint: layer dimensions do not chain");
  }
  if (p.layers.empty()) throw ValidationError("corrupt checkpoint: network without layers");
  return p;
}

}  // namespace

std::string serialize_checkpoint(const PolicyCheckpoint& ckpt) {
  std::string payload;
  const auto pf = flatten(ckpt.policy);
  const auto cf = flatten(ckpt.critic);
  payload.reserve(8 * (pf.size() + cf.size()));
  for (double v : pf) put_double(payload, v);
  for (double v : cf) put_double(payload, v);

  const json header = {{"n_pad", ckpt.n_pad},
                       {"include_count", ckpt.include_count},
                       {"state_dim", ckpt.state_dim()},
                       {"action_dim", ckpt.action_dim()},
                       {"policy_layers", shapes(ckpt.policy)},
                       {"critic_layers", shapes(ckpt.critic)},
                       {"reward_weights", to_json(ckpt.weights)},
                       {"hyperparams", to_json(ckpt.hyper)},
                       {"metadata",
                        {{"iterations", ckpt.meta.iterations}, {"final_mean_return", ckpt.meta.final_mean_return}}},
                       {"payload_doubles", pf.size() + cf.size()},
                       {"checksum", hex64(fnv1a64(payload))}};

  std::string out = std::string(kCheckpointMagic) + " " + std::to_string(kCheckpointVersion) + "\n";
  out += header.dump();
  out += "\n";
  out += payload;
  return out;
}

PolicyCheckpoint parse_checkpoint(std::string_view bytes) {
  const auto nl1 = bytes.find('\n');
  if (nl1 == std::string_view::npos) throw ValidationError("not a checkpoint file (missing magic line)");
  const std::string_view magic_line = bytes.substr(0, nl1);
  const std::string expected_prefix = std::string(kCheckpointMagic) + " ";
  if (magic_line.substr(0, expected_prefix.size()) != expected_prefix) {
    throw ValidationError("not a checkpoint file (bad magic)");
  }
  const std::string version_text(magic_line.substr(expected_prefix.size()));
  if (version_text != std::to_string(kCheckpointVersion)) {
    throw ValidationError("unsupported checkpoint version '" + version_text + "'");
  }
  const auto nl2 = bytes.find('\n', nl1 + 1);
  if (nl2 == std::string_view::npos) throw ValidationError("corrupt checkpoint: truncated header");

  try {
    const json header = json::parse(bytes.substr(nl1 + 1, nl2 - nl1 - 1));
    PolicyCheckpoint ckpt;
    ckpt.n_pad = header.at("n_pad").get<std::size_t>();
    ckpt.include_count = header.at("include_count").get<bool>();
    ckpt.policy = shell_from_shapes(header.at("policy_layers"));
    ckpt.critic = shell_from_shapes(header.at("critic_layers"));
    ckpt.weights = reward_weights_from_json(header.at("reward_weights"));
    ckpt.hyper = hyperparams_from_json(header.at("hyperparams"));
    ckpt.meta.iterations = header.at("metadata").at("iterations").get<int>();
    ckpt.meta.final_mean_return = header.at("metadata").at("final_mean_return").get<double>();

    if (header.at("state_dim").get<std::size_t>() != ckpt.state_dim() ||
        header.at("action_dim").get<std::size_t>() != ckpt.action_dim() ||
        ckpt.policy.input_dim() != ckpt.state_dim() || ckpt.critic.input_dim() != ckpt.state_dim() ||
        ckpt.policy.output_dim() != ckpt.action_dim() || ckpt.critic.output_dim() != 1) {
      throw ValidationError("corrupt checkpoint: dimension header inconsistent with N_pad");
    }

    const std::size_t count = header.at("payload_doubles").get<std::size_t>();
    if (count != ckpt.policy.parameter_count() + ckpt.critic.parameter_count()) {
      throw ValidationError("corrupt checkpoint: payload size disagrees with layer shapes");
    }
    const std::string_view payload = bytes.substr(nl2 + 1);
    if (payload.size() != 8 * count) {
      throw ValidationError("corrupt checkpoint: payload has " + std::to_string(payload.size()) + " bytes, expected " +
                            std::to_string(8 * count));
    }
    if (hex64(fnv1a64(payload)) != header.at("checksum").get<std::string>()) {
      throw ValidationError("corrupt checkpoint: checksum mismatch");
    }

    std::vector<double> pf(ckpt.policy.parameter_count()), cf(ckpt.critic.parameter_count());
    std::size_t off = 0;
    for (double& v : pf) {
      v = get_double(payload, off);
      off += 8;
    }
    for (double& v : cf) {
      v = get_double(payload, off);
      off += 8;
    }
    assign_flat(ckpt.policy, pf);
    assign_flat(ckpt.critic, cf);
    return ckpt;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("corrupt checkpoint header: ") + e.what());
  }
}

void save_checkpoint(const PolicyCheckpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

PolicyCheckpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::size_t> expected_n_pad) {
  PolicyCheckpoint ckpt = parse_checkpoint(read_file(path));
  if (expected_n_pad && *expected_n_pad != ckpt.n_pad) {
    throw ValidationError("incompatible checkpoint: trained for N_pad=" + std::to_string(ckpt.n_pad) +
                          ", expected N_pad=" + std::to_string(*expected_n_pad));
  }
  return ckpt;
}

}  // namespace repose
