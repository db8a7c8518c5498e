/* Copyright 2026 The moelora Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "moelora/checkpoint.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "moelora/errors.hpp"

namespace moelora {

namespace {

constexpr char kMagic[8] = {'M', 'O', 'E', 'L', 'O', 'R', 'A', '\0'};

template <typename T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const std::string& what) {
    T v;
    read(&v, sizeof(T), what);
    return v;
  }

  void read(void* dst, size_t n, const std::string& what) {
    if (n > bytes_.size() - pos_) throw IntegrityError("checkpoint truncated in " + what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  size_t pos() const { return pos_; }
  size_t remaining() const { return bytes_.size() - pos_; }
  const char* at(size_t p) const { return bytes_.data() + p; }

 private:
  const std::string& bytes_;
  size_t pos_ = 0;
};

std::uint32_t crc(const char* data, size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

Record f64_record(std::string name, const Shape& shape, std::span<const double> data) {
  Record r;
  r.name = std::move(name);
  r.kind = RecordKind::kF64;
  r.shape = shape;
  r.f64.assign(data.begin(), data.end());
  return r;
}

Record i64_record(std::string name, std::vector<std::int64_t> values) {
  Record r;
  r.name = std::move(name);
  r.kind = RecordKind::kI64;
  r.shape = {static_cast<std::int64_t>(values.size())};
  r.i64 = std::move(values);
  return r;
}

std::string queue_name(size_t layer, size_t expert) {
  return "queue." + std::to_string(layer) + "." + std::to_string(expert);
}

}  // namespace

TrainState initial_train_state(const MoeLoraModel& model) {
  TrainState s;
  const auto& c = model.contrastive_config();
  for (int l = 0; l < model.config().num_layers; ++l) {
    s.queues.push_back(make_queue_bank(model.moe_config().num_experts, c.queue_size, c.proj_dim));
  }
  return s;
}

const Record& Checkpoint::get(const std::string& name) const {
  for (const auto& r : records) {
    if (r.name == name) return r;
  }
  throw IntegrityError("checkpoint has no record '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& r : records) {
    if (r.name == name) return true;
  }
  return false;
}

Checkpoint make_checkpoint(const ExperimentConfig& config, const MoeLoraModel& model, const TrainState& state) {
  Checkpoint ck;
  Record cfg;
  cfg.name = "config";
  cfg.kind = RecordKind::kBytes;
  cfg.bytes = config_to_json(config);
  cfg.shape = {static_cast<std::int64_t>(cfg.bytes.size())};
  ck.records.push_back(std::move(cfg));
  ck.records.push_back(i64_record("train.step", {state.step}));
  const auto params = model.trainable_parameters();
  for (const auto& p : params) ck.records.push_back(f64_record("param." + p.name, p.tensor.shape(), p.tensor.data()));
  ck.records.push_back(i64_record("adam.step", {state.optimizer.step}));
  if (!state.optimizer.m.empty()) {
    for (size_t i = 0; i < params.size(); ++i) {
      ck.records.push_back(f64_record("adam.m." + params[i].name, params[i].tensor.shape(), state.optimizer.m[i]));
      ck.records.push_back(f64_record("adam.v." + params[i].name, params[i].tensor.shape(), state.optimizer.v[i]));
    }
  }
  for (size_t l = 0; l < state.queues.size(); ++l) {
    for (size_t e = 0; e < state.queues[l].size(); ++e) {
      const auto& q = state.queues[l][e];
      ck.records.push_back(f64_record(queue_name(l, e) + ".buffer", {q.capacity(), q.dim()}, q.buffer()));
      ck.records.push_back(i64_record(queue_name(l, e) + ".state", {q.write_ptr(), q.filled()}));
    }
  }
  return ck;
}

ExperimentConfig checkpoint_config(const Checkpoint& ckpt) { return parse_config(ckpt.get("config").bytes); }

RestoredRun restore_checkpoint(const Checkpoint& ckpt) {
  ExperimentConfig config = checkpoint_config(ckpt);
  MoeLoraModel model(config.model, config.moe, config.contrastive);
  TrainState state = initial_train_state(model);
  state.step = ckpt.get("train.step").i64.at(0);
  const auto params = model.trainable_parameters();
  auto copy_into = [](const Record& r, const Shape& shape, std::span<double> dst) {
    if (r.kind != RecordKind::kF64 || r.shape != shape || r.f64.size() != dst.size()) {
      throw IntegrityError("record '" + r.name + "' has shape " + shape_str(r.shape) + ", expected " +
                           shape_str(shape));
    }
    std::copy(r.f64.begin(), r.f64.end(), dst.begin());
  };
  for (const auto& p : params) {
    Tensor t = p.tensor;
    copy_into(ckpt.get("param." + p.name), t.shape(), t.mutable_data());
  }
  state.optimizer.step = ckpt.get("adam.step").i64.at(0);
  if (ckpt.has("adam.m." + params.front().name)) {
    state.optimizer.m.resize(params.size());
    state.optimizer.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.optimizer.m[i].resize(params[i].tensor.numel());
      state.optimizer.v[i].resize(params[i].tensor.numel());
      copy_into(ckpt.get("adam.m." + params[i].name), params[i].tensor.shape(), state.optimizer.m[i]);
      copy_into(ckpt.get("adam.v." + params[i].name), params[i].tensor.shape(), state.optimizer.v[i]);
    }
  }
  for (size_t l = 0; l < state.queues.size(); ++l) {
    for (size_t e = 0; e < state.queues[l].size(); ++e) {
      auto& q = state.queues[l][e];
      const auto& buf = ckpt.get(queue_name(l, e) + ".buffer");
      const auto& st = ckpt.get(queue_name(l, e) + ".state");
      if (buf.f64.size() != q.buffer().size() || st.i64.size() != 2) {
        throw IntegrityError("record '" + buf.name + "' does not match the queue geometry");
      }
      q.restore(buf.f64, static_cast<int>(st.i64[0]), static_cast<int>(st.i64[1]));
    }
  }
  return {std::move(config), std::move(model), std::move(state)};
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  put(out, kCheckpointVersion);
  put(out, static_cast<std::uint32_t>(ckpt.records.size()));
  for (const auto& r : ckpt.records) {
    const size_t begin = out.size();
    put(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    put(out, static_cast<std::uint8_t>(r.kind));
    put(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) put(out, static_cast<std::int64_t>(d));
    const char* payload = nullptr;
    std::uint64_t n = 0;
    switch (r.kind) {
      case RecordKind::kF64:
        payload = reinterpret_cast<const char*>(r.f64.data());
        n = r.f64.size() * sizeof(double);
        break;
      case RecordKind::kI64:
        payload = reinterpret_cast<const char*>(r.i64.data());
        n = r.i64.size() * sizeof(std::int64_t);
        break;
      case RecordKind::kBytes:
        payload = r.bytes.data();
        n = r.bytes.size();
        break;
    }
    put(out, n);
    out.append(payload, n);
    put(out, crc(out.data() + begin, out.size() - begin));
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic), "header");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IntegrityError("not a checkpoint file (bad magic)");
  const auto version = in.get<std::uint32_t>("header");
  if (version != kCheckpointVersion) {
    throw IntegrityError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = in.get<std::uint32_t>("header");
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    const size_t begin = in.pos();
    std::string where = "record " + std::to_string(i);
    Record r;
    const auto name_len = in.get<std::uint32_t>(where);
    if (name_len > in.remaining()) throw IntegrityError("checkpoint truncated in " + where);
    r.name.resize(name_len);
    in.read(r.name.data(), name_len, where);
    where += " ('" + r.name + "')";
    const auto kind = in.get<std::uint8_t>(where);
    if (kind < 1 || kind > 3) throw IntegrityError("unknown record kind in " + where);
    r.kind = static_cast<RecordKind>(kind);
    const auto ndim = in.get<std::uint32_t>(where);
    if (ndim > 16) throw IntegrityError("implausible rank in " + where);
    r.shape.resize(ndim);
    for (auto& d : r.shape) d = in.get<std::int64_t>(where);
    const auto n = in.get<std::uint64_t>(where);
    if (n > in.remaining()) throw IntegrityError("checkpoint truncated in " + where);
    switch (r.kind) {
      case RecordKind::kF64:
        if (n % sizeof(double)) throw IntegrityError("ragged payload in " + where);
        r.f64.resize(n / sizeof(double));
        in.read(r.f64.data(), n, where);
        break;
      case RecordKind::kI64:
        if (n % sizeof(std::int64_t)) throw IntegrityError("ragged payload in " + where);
        r.i64.resize(n / sizeof(std::int64_t));
        in.read(r.i64.data(), n, where);
        break;
      case RecordKind::kBytes:
        r.bytes.resize(n);
        in.read(r.bytes.data(), n, where);
        break;
    }
    const std::uint32_t expected = crc(in.at(begin), in.pos() - begin);
    if (in.get<std::uint32_t>(where) != expected) throw IntegrityError("checksum mismatch in " + where);
    if (r.kind != RecordKind::kBytes) {
      const auto elems = r.kind == RecordKind::kF64 ? r.f64.size() : r.i64.size();
      if (shape_numel(r.shape) != static_cast<std::int64_t>(elems)) {
        throw IntegrityError("shape/payload mismatch in " + where);
      }
    }
    ck.records.push_back(std::move(r));
  }
  if (in.remaining() != 0) throw IntegrityError("trailing bytes after record " + std::to_string(count));
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp);
    const std::string bytes = serialize_checkpoint(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw InputError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace moelora
