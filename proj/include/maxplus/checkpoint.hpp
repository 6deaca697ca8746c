#pragma once

// Checkpoint container.
//
//   bytes 0..7   magic "MPCKPT01"
//   bytes 8..15  header length L (uint64, little endian)
//   next L bytes UTF-8 JSON header: head spec, parameter table (name, kind,
//                shape), batchnorm flags, optimizer kind/step
//   payload      for each parameter in table order: values as little-endian
//                IEEE-754 doubles, then one mask byte per entry; then BN
//                running mean and variance; then optimizer moments (m, and v
//                for Adam) per parameter
//
// Doubles are copied bit for bit, so save/load round-trips exactly.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "maxplus/data.hpp"
#include "maxplus/heads.hpp"
#include "maxplus/optim.hpp"

namespace maxplus {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

inline constexpr char kCheckpointMagic[9] = "MPCKPT01";

struct Checkpoint {
  ModelParams model;
  std::optional<OptimizerState> optimizer;
};

inline nlohmann::ordered_json spec_to_json(const HeadSpec& s) {
  return {{"variant", to_string(s.variant)}, {"d_in", s.d_in},           {"d_hidden", s.d_hidden},
          {"d_out", s.d_out},                {"pooling", s.pooling},     {"batchnorm", s.batchnorm},
          {"seed", s.seed},                  {"ensure_row_nonempty", s.ensure_row_nonempty}};
}

inline HeadSpec spec_from_json(const nlohmann::ordered_json& j) {
  HeadSpec s;
  s.variant = parse_variant(j.at("variant").get<std::string>());
  s.d_in = j.at("d_in");
  s.d_hidden = j.at("d_hidden");
  s.d_out = j.at("d_out");
  s.pooling = j.value("pooling", std::size_t{2});
  s.batchnorm = j.value("batchnorm", true);
  s.seed = j.value("seed", std::uint64_t{0});
  s.ensure_row_nonempty = j.value("ensure_row_nonempty", false);
  return s;
}

namespace detail {

inline void put_doubles(std::string& out, std::span<const double> v) {
  out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

class Reader {
 public:
  Reader(std::vector<std::uint8_t> buf, std::string name) : buf_(std::move(buf)), name_(std::move(name)) {}
  const std::uint8_t* take(std::size_t n) {
    if (pos_ + n > buf_.size())
      throw ParseError(name_ + ": truncated at offset " + std::to_string(pos_) + " (need " + std::to_string(n) +
                       " more bytes)");
    const auto* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  void doubles(std::span<double> out) { std::memcpy(out.data(), take(out.size() * sizeof(double)), out.size() * sizeof(double)); }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::vector<std::uint8_t> buf_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& model,
                            const OptimizerState* optimizer = nullptr) {
  nlohmann::ordered_json h;
  h["format"] = "maxplus-checkpoint";
  h["version"] = 1;
  h["spec"] = spec_to_json(model.spec);
  auto& table = h["params"] = nlohmann::ordered_json::array();
  for (const auto& p : model.params) table.push_back({{"name", p.name}, {"kind", to_string(p.kind)}, {"shape", p.value.shape()}});
  h["batchnorm_stats"] = model.bn.has_value();
  if (model.bn) {
    h["bn_momentum"] = model.bn->momentum;
    h["bn_eps"] = model.bn->eps;
  }
  if (optimizer) h["optimizer"] = {{"kind", to_string(optimizer->kind)}, {"step", optimizer->step}};
  else h["optimizer"] = nullptr;

  const std::string header = h.dump();
  std::string out(kCheckpointMagic, 8);
  const std::uint64_t len = header.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof len);
  out += header;
  for (const auto& p : model.params) {
    detail::put_doubles(out, p.value.data());
    out.append(reinterpret_cast<const char*>(p.active.data()), p.active.size());
  }
  if (model.bn) {
    detail::put_doubles(out, model.bn->running_mean.data());
    detail::put_doubles(out, model.bn->running_var.data());
  }
  if (optimizer) {
    if (optimizer->m.size() != model.params.size()) throw ContractViolation("save_checkpoint: optimizer state does not match model");
    for (const auto& t : optimizer->m) detail::put_doubles(out, t.data());
    for (const auto& t : optimizer->v) detail::put_doubles(out, t.data());
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  detail::Reader in(detail::read_file(path), path.filename().string());
  if (std::memcmp(in.take(8), kCheckpointMagic, 8) != 0) throw ParseError(path.string() + ": not a checkpoint (bad magic at offset 0)");
  std::uint64_t len;
  std::memcpy(&len, in.take(sizeof len), sizeof len);
  const auto* hp = in.take(len);
  const auto h = nlohmann::ordered_json::parse(std::string(reinterpret_cast<const char*>(hp), len));
  if (h.value("version", 0) != 1) throw ParseError(path.string() + ": unsupported checkpoint version");

  Checkpoint ck;
  ck.model.spec = spec_from_json(h.at("spec"));
  for (const auto& e : h.at("params")) {
    Parameter p;
    p.name = e.at("name");
    p.kind = parse_param_kind(e.at("kind").get<std::string>());
    p.value = Tensor(e.at("shape").get<Shape>());
    in.doubles(p.value.data());
    const auto* mask = in.take(p.value.size());
    p.active.assign(mask, mask + p.value.size());
    ck.model.params.push_back(std::move(p));
  }
  if (h.at("batchnorm_stats").get<bool>()) {
    const std::size_t f = ck.model.get("bn.gamma").value.size();
    BatchNormStats bn = BatchNormStats::make(f);
    bn.momentum = h.at("bn_momentum");
    bn.eps = h.at("bn_eps");
    in.doubles(bn.running_mean.data());
    in.doubles(bn.running_var.data());
    ck.model.bn = std::move(bn);
  }
  if (!h.at("optimizer").is_null()) {
    OptimizerState s = OptimizerState::zeros(ck.model, parse_optimizer(h["optimizer"].at("kind").get<std::string>()));
    s.step = h["optimizer"].at("step");
    for (auto& t : s.m) in.doubles(t.data());
    for (auto& t : s.v) in.doubles(t.data());
    ck.optimizer = std::move(s);
  }
  if (!in.done()) throw ParseError(path.string() + ": trailing bytes at offset " + std::to_string(in.pos()));
  return ck;
}

}  // namespace maxplus
