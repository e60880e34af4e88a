#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cellmt/error.hpp"
#include "cellmt/network.hpp"

namespace cellmt {

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = nlohmann::json{{"encoder_channels", c.encoder_channels},
                     {"bottleneck_channels", c.bottleneck_channels},
                     {"dropout_rate", c.dropout_rate},
                     {"dense_units", c.dense_units},
                     {"input_channels", c.input_channels},
                     {"init_seed", c.init_seed},
                     {"count_bias_init", c.count_bias_init}};
}

inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
  NetworkConfig d;
  c.encoder_channels = j.value("encoder_channels", d.encoder_channels);
  c.bottleneck_channels = j.value("bottleneck_channels", d.bottleneck_channels);
  c.dropout_rate = j.value("dropout_rate", d.dropout_rate);
  c.dense_units = j.value("dense_units", d.dense_units);
  c.input_channels = j.value("input_channels", d.input_channels);
  c.init_seed = j.value("init_seed", d.init_seed);
  c.count_bias_init = j.value("count_bias_init", d.count_bias_init);
}

// Binary layout: 8-byte magic, uint32 version, uint64 header length, JSON
// header (network config, epoch, parameter table), then every parameter as
// little-endian float32 in table order.
struct Checkpoint {
  NetworkConfig config;
  int epoch = 0;
  std::vector<std::vector<float>> values;  // aligned with Network::params()
};

inline constexpr char kCheckpointMagic[8] = {'C', 'E', 'L', 'L', 'M', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
Checkpoint make_checkpoint(const Network<T>& net, int epoch) {
  Checkpoint c;
  c.config = net.config();
  c.epoch = epoch;
  for (const auto& p : net.params()) c.values.emplace_back(p.value.begin(), p.value.end());
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const Network<float> shape_ref(ckpt.config, Network<float>::Uninitialized{});
  const auto& params = shape_ref.params();
  if (params.size() != ckpt.values.size()) {
    throw InvalidArgument("checkpoint values do not match the network layout");
  }
  nlohmann::json header;
  header["network"] = ckpt.config;
  header["epoch"] = ckpt.epoch;
  header["dtype"] = "float32";
  auto& table = header["params"];
  table = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].value.size() != ckpt.values[i].size()) {
      throw InvalidArgument("checkpoint parameter '" + params[i].name + "' has the wrong size");
    }
    table.push_back({{"name", params[i].name},
                     {"group", to_string(params[i].group)},
                     {"shape", params[i].shape}});
  }
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& v : ckpt.values) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(float)));
  }
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw IoError("'" + path.string() + "' is not a cellmt checkpoint");
  }
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const auto header = nlohmann::json::parse(text);
  Checkpoint c;
  c.config = header.at("network").get<NetworkConfig>();
  c.epoch = header.at("epoch").get<int>();
  const Network<float> shape_ref(c.config, Network<float>::Uninitialized{});
  const auto& table = header.at("params");
  if (table.size() != shape_ref.params().size()) {
    throw IoError("checkpoint parameter table does not match its network config");
  }
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& p = shape_ref.params()[i];
    if (table[i].at("name").get<std::string>() != p.name) {
      throw IoError("checkpoint parameter " + std::to_string(i) + " is '" +
                    table[i].at("name").get<std::string>() + "', expected '" + p.name + "'");
    }
    std::vector<float> v(p.value.size());
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
    if (!in) throw IoError("checkpoint '" + path.string() + "' is truncated");
    c.values.push_back(std::move(v));
  }
  return c;
}

template <typename T>
void apply_checkpoint(const Checkpoint& ckpt, Network<T>& net) {
  auto& params = net.params();
  if (params.size() != ckpt.values.size()) {
    throw InvalidArgument("checkpoint does not match the network layout");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].value.size() != ckpt.values[i].size()) {
      throw InvalidArgument("checkpoint parameter '" + params[i].name + "' has the wrong size");
    }
    std::copy(ckpt.values[i].begin(), ckpt.values[i].end(), params[i].value.begin());
  }
}

inline Network<float> network_from_checkpoint(const Checkpoint& ckpt) {
  Network<float> net(ckpt.config, Network<float>::Uninitialized{});
  apply_checkpoint(ckpt, net);
  return net;
}

}  // namespace cellmt
