#include "c2l/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace c2l {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 4> kMagic{'C', '2', 'L', '1'};

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void put_floats(std::string& buf, std::span<const float> data) {
  for (float f : data) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

void get_floats(const unsigned char* p, std::span<float> out) {
  for (float& f : out) {
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
                               static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
    f = std::bit_cast<float>(bits);
    p += 4;
  }
}

struct Blob {
  std::string name;
  std::string role;
  const Tensor<float>* tensor;
};

void add_params(std::vector<Blob>& blobs, const NetworkParams<float>& p, const char* role) {
  for (const auto& e : p.entries) blobs.push_back({e.name, role, &e.tensor});
}

NetworkParams<float> take_params(std::vector<Parameter<float>>& all, const std::vector<std::string>& roles,
                                 const std::string& role, Role as) {
  NetworkParams<float> out;
  out.role = as;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (roles[i] == role) {
      all[i].tensor.set_requires_grad(as == Role::student && role != "optimizer");
      out.entries.push_back(all[i]);
    }
  }
  return out;
}

}  // namespace

Checkpoint full_checkpoint(const TrainState& state, const TrainConfig& config) {
  Checkpoint c;
  c.encoder = config.encoder;
  c.student = state.student;
  c.teacher = state.teacher;
  if (!state.velocity.entries.empty()) c.velocity = state.velocity;
  c.queue = state.queue;
  c.iteration = state.iteration;
  c.epoch = state.epoch;
  c.seed = state.seed;
  c.config = to_json(config);
  return c;
}

Checkpoint student_export(const NetworkParams<float>& student, const EncoderConfig& encoder) {
  Checkpoint c;
  c.encoder = encoder;
  c.student = student;
  return c;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  std::vector<Blob> blobs;
  add_params(blobs, ckpt.student, "student");
  if (ckpt.teacher) add_params(blobs, *ckpt.teacher, "teacher");
  if (ckpt.velocity) add_params(blobs, *ckpt.velocity, "optimizer");
  if (ckpt.queue) blobs.push_back({"queue", "queue", &ckpt.queue->storage()});

  Json tensors = Json::array();
  for (const auto& b : blobs) {
    tensors.push_back(Json{{"name", b.name}, {"role", b.role}, {"shape", b.tensor->shape()}});
  }
  Json manifest{{"format_version", kCheckpointVersion},
                {"encoder", to_json(ckpt.encoder)},
                {"tensors", tensors},
                {"progress", Json{{"iteration", ckpt.iteration}, {"epoch", ckpt.epoch}}},
                {"rng", Json{{"seed", ckpt.seed}, {"scheme", "counter"}}},
                {"queue", ckpt.queue ? Json{{"present", true},
                                            {"capacity", ckpt.queue->capacity()},
                                            {"dim", ckpt.queue->dim()},
                                            {"head", ckpt.queue->head()},
                                            {"inserted", ckpt.queue->inserted()}}
                                     : Json{{"present", false}}},
                {"config", ckpt.config.is_null() ? Json::object() : ckpt.config}};
  const std::string text = manifest.dump();

  std::string buf(kMagic.begin(), kMagic.end());
  put_u64(buf, text.size());
  buf += text;
  for (const auto& b : blobs) put_floats(buf, b.tensor->data());

  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    out.flush();
    if (!out) throw CheckpointError("failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic.data(), 4) != 0) {
    throw CheckpointError(where + "not a checkpoint (bad magic)");
  }
  const std::uint64_t mlen = get_u64(bytes.data() + 4);
  if (mlen > bytes.size() - 12) throw CheckpointError(where + "truncated manifest");
  Json m;
  try {
    m = Json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(mlen));
  } catch (const Json::exception& e) {
    throw CheckpointError(where + "unreadable manifest: " + e.what());
  }

  Checkpoint c;
  std::vector<Parameter<float>> all;
  std::vector<std::string> roles;
  try {
    if (m.at("format_version").get<int>() != kCheckpointVersion) {
      throw CheckpointError(where + "unsupported format version " + m.at("format_version").dump());
    }
    c.encoder = encoder_from_json(m.at("encoder"));
    c.iteration = m.at("progress").at("iteration").get<std::uint64_t>();
    c.epoch = m.at("progress").at("epoch").get<std::size_t>();
    c.seed = m.at("rng").at("seed").get<std::uint64_t>();
    c.config = m.at("config");

    // Sizes first: nothing is decoded unless the payload length is exact.
    std::uint64_t expected = 0;
    std::vector<Shape> shapes;
    for (const auto& t : m.at("tensors")) {
      Shape s = t.at("shape").get<Shape>();
      if (s.empty()) throw CheckpointError(where + "tensor with empty shape");
      std::uint64_t n = 1;
      for (auto d : s) {
        if (d == 0 || n > (std::uint64_t{1} << 40) / d) throw CheckpointError(where + "implausible tensor shape");
        n *= d;
      }
      expected += 4 * n;
      shapes.push_back(std::move(s));
    }
    const std::uint64_t payload = bytes.size() - 12 - mlen;
    if (payload != expected) {
      throw CheckpointError(where + "payload is " + std::to_string(payload) + " bytes but the manifest describes " +
                            std::to_string(expected));
    }

    const unsigned char* p = bytes.data() + 12 + mlen;
    std::size_t k = 0;
    for (const auto& t : m.at("tensors")) {
      Tensor<float> tensor(shapes[k]);
      get_floats(p, tensor.data());
      p += 4 * tensor.size();
      all.push_back({t.at("name").get<std::string>(), std::move(tensor)});
      roles.push_back(t.at("role").get<std::string>());
      ++k;
    }

    c.student = take_params(all, roles, "student", Role::student);
    if (c.student.entries.empty()) throw CheckpointError(where + "no student tensors");
    auto teacher = take_params(all, roles, "teacher", Role::teacher);
    if (!teacher.entries.empty()) c.teacher = std::move(teacher);
    auto velocity = take_params(all, roles, "optimizer", Role::student);
    if (!velocity.entries.empty()) c.velocity = std::move(velocity);
    const Json& q = m.at("queue");
    if (q.at("present").get<bool>()) {
      for (std::size_t i = 0; i < all.size(); ++i) {
        if (roles[i] == "queue") {
          c.queue = MemoryQueue<float>::restore(all[i].tensor, q.at("head").get<std::size_t>(),
                                                q.at("inserted").get<std::uint64_t>());
        }
      }
      if (!c.queue) throw CheckpointError(where + "manifest announces a queue but lists no queue tensor");
    }
  } catch (const Json::exception& e) {
    throw CheckpointError(where + "malformed manifest: " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(where + "bad encoder section: " + e.what());
  } catch (const ShapeError& e) {
    throw CheckpointError(where + e.what());
  }
  return c;
}

namespace {

void require_layout(const NetworkParams<float>& params, const EncoderConfig& encoder, const std::string& what) {
  const auto reference = init_params<float>(encoder, 0);
  if (!params.same_layout(reference)) {
    throw CheckpointError(what + " tensors do not match the encoder configuration");
  }
}

}  // namespace

TrainState restore_state(const Checkpoint& ckpt, const TrainConfig& config) {
  if (!ckpt.teacher || !ckpt.queue) {
    throw CheckpointError("checkpoint holds no teacher/queue; it is an export, not a resumable checkpoint");
  }
  if (!(ckpt.encoder == config.encoder)) throw CheckpointError("checkpoint encoder differs from the configured one");
  if (ckpt.seed != config.seed) {
    throw CheckpointError("checkpoint seed " + std::to_string(ckpt.seed) + " differs from configured seed " +
                          std::to_string(config.seed));
  }
  if (ckpt.queue->capacity() != config.queue_size || ckpt.queue->dim() != config.encoder.feature_dim) {
    throw CheckpointError("checkpoint queue shape differs from the configured one");
  }
  if ((config.sgd_momentum > 0.0) != ckpt.velocity.has_value()) {
    throw CheckpointError("checkpoint optimizer state does not match sgd_momentum");
  }
  require_layout(ckpt.student, ckpt.encoder, "student");
  require_layout(*ckpt.teacher, ckpt.encoder, "teacher");
  TrainState s;
  s.student = ckpt.student;
  s.teacher = *ckpt.teacher;
  if (ckpt.velocity) s.velocity = *ckpt.velocity;
  s.queue = *ckpt.queue;
  s.iteration = ckpt.iteration;
  s.epoch = ckpt.epoch;
  s.seed = ckpt.seed;
  return s;
}

NetworkParams<float> load_encoder(const fs::path& path, const EncoderConfig& expected) {
  Checkpoint c = load_checkpoint(path);
  if (!(c.encoder == expected)) {
    throw CheckpointError(path.string() + ": encoder configuration " + to_json(c.encoder).dump() +
                          " does not match the expected " + to_json(expected).dump());
  }
  require_layout(c.student, c.encoder, path.string() + ": student");
  return c.student;
}

}  // namespace c2l
