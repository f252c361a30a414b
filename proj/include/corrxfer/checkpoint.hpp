#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "corrxfer/approximator.hpp"
#include "corrxfer/replay.hpp"

// On-disk formats. Both files start with a one-line JSON manifest followed by
// packed little-endian 32-bit floats (this build targets little-endian hosts).
//
// Approximator checkpoint: manifest {format_version, kind, architecture,
// frame_size, param_count, buffer_count, rng_state, created_step}; payload of
// param_count floats (the flat parameter vector), then buffer_count floats of
// normalization running statistics.
//
// Experience memory: manifest {format_version, kind, count, frame_h, frame_w,
// frames_per_state, frame_count}; a table of frame_count frames (h*w floats
// each), then per transition 8 uint32 frame indices (state, next state),
// int32 action, float reward, uint8 terminal. Shared frames are stored once.

namespace corrxfer {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

inline constexpr int kCheckpointFormatVersion = 1;

struct MissingArtifactError : std::runtime_error {
  explicit MissingArtifactError(const std::string& path)
      : std::runtime_error("missing artifact: " + path) {}
};

namespace detail {

inline void write_floats(std::ostream& os, const std::vector<float>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(float)));
}

inline std::vector<float> read_floats(std::istream& is, std::size_t n) {
  std::vector<float> v(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!is) throw std::runtime_error("checkpoint payload truncated");
  return v;
}

inline nlohmann::json read_manifest(std::istream& is, const std::string& path) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("cannot read manifest: " + path);
  return nlohmann::json::parse(line);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Approximator<float>& net,
                            std::uint64_t rng_state, long created_step) {
  nlohmann::json m;
  m["format_version"] = kCheckpointFormatVersion;
  m["kind"] = "approximator";
  m["architecture"] = net.arch().name;
  m["frame_size"] = net.arch().in_h;
  m["param_count"] = net.param_count();
  m["buffer_count"] = net.buffers().size();
  m["rng_state"] = rng_state;
  m["created_step"] = created_step;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << m.dump() << '\n';
  detail::write_floats(os, net.params());
  detail::write_floats(os, net.buffers());
}

inline Approximator<float> load_checkpoint(const std::string& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifactError(path);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifactError(path);
  const nlohmann::json m = detail::read_manifest(is, path);
  if (m.at("kind") != "approximator") throw std::runtime_error(path + ": not a checkpoint");
  if (int(m.at("format_version")) != kCheckpointFormatVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version");
  Approximator<float> net(preset(m.at("architecture"), m.at("frame_size")));
  const std::size_t pc = m.at("param_count"), bc = m.at("buffer_count");
  if (pc != net.param_count() || bc != net.buffers().size())
    throw std::runtime_error(path + ": parameter count does not match architecture");
  net.params() = detail::read_floats(is, pc);
  net.buffers() = detail::read_floats(is, bc);
  return net;
}

inline void save_memory(const std::string& path, const ExperienceMemory& memory) {
  // collect unique frames by pixel-buffer identity
  std::unordered_map<const void*, std::uint32_t> frame_ids;
  std::vector<const Frame*> frames;
  auto intern = [&](const Frame& f) {
    auto [it, fresh] = frame_ids.try_emplace(f.px.get(), static_cast<std::uint32_t>(frames.size()));
    if (fresh) frames.push_back(&f);
    return it->second;
  };
  std::vector<std::uint32_t> ids;
  ids.reserve(memory.size() * 8);
  for (std::size_t i = 0; i < memory.size(); ++i) {
    for (const Frame& f : memory[i].s.frames) ids.push_back(intern(f));
    for (const Frame& f : memory[i].s_next.frames) ids.push_back(intern(f));
  }
  const int h = memory.empty() ? 0 : memory[0].s.frame_h();
  const int w = memory.empty() ? 0 : memory[0].s.frame_w();
  nlohmann::json m;
  m["format_version"] = kCheckpointFormatVersion;
  m["kind"] = "experience-memory";
  m["count"] = memory.size();
  m["frame_h"] = h;
  m["frame_w"] = w;
  m["frames_per_state"] = kFramesPerState;
  m["frame_count"] = frames.size();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << m.dump() << '\n';
  for (const Frame* f : frames)
    os.write(reinterpret_cast<const char*>(f->px->data()),
             static_cast<std::streamsize>(f->px->size() * sizeof(float)));
  for (std::size_t i = 0; i < memory.size(); ++i) {
    const Transition& t = memory[i];
    os.write(reinterpret_cast<const char*>(&ids[i * 8]), 8 * sizeof(std::uint32_t));
    const std::int32_t a = action_id(t.a);
    os.write(reinterpret_cast<const char*>(&a), sizeof(a));
    os.write(reinterpret_cast<const char*>(&t.r), sizeof(t.r));
    const std::uint8_t term = t.terminal ? 1 : 0;
    os.write(reinterpret_cast<const char*>(&term), sizeof(term));
  }
}

inline ExperienceMemory load_memory(const std::string& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifactError(path);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifactError(path);
  const nlohmann::json m = detail::read_manifest(is, path);
  if (m.at("kind") != "experience-memory") throw std::runtime_error(path + ": not a memory file");
  const std::size_t count = m.at("count"), frame_count = m.at("frame_count");
  const int h = m.at("frame_h"), w = m.at("frame_w");
  if (int(m.at("frames_per_state")) != kFramesPerState)
    throw std::runtime_error(path + ": unsupported frame stacking");
  std::vector<Frame> frames;
  frames.reserve(frame_count);
  for (std::size_t i = 0; i < frame_count; ++i) {
    auto px = std::make_shared<std::vector<float>>(static_cast<std::size_t>(h) * w);
    is.read(reinterpret_cast<char*>(px->data()),
            static_cast<std::streamsize>(px->size() * sizeof(float)));
    frames.push_back(Frame{h, w, std::move(px)});
  }
  ExperienceMemory memory(std::max<std::size_t>(count, 1));
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t ids[8];
    std::int32_t a;
    float r;
    std::uint8_t term;
    is.read(reinterpret_cast<char*>(ids), sizeof(ids));
    is.read(reinterpret_cast<char*>(&a), sizeof(a));
    is.read(reinterpret_cast<char*>(&r), sizeof(r));
    is.read(reinterpret_cast<char*>(&term), sizeof(term));
    if (!is) throw std::runtime_error(path + ": truncated transition records");
    Transition t;
    for (int f = 0; f < kFramesPerState; ++f) t.s.frames[static_cast<std::size_t>(f)] = frames.at(ids[f]);
    for (int f = 0; f < kFramesPerState; ++f)
      t.s_next.frames[static_cast<std::size_t>(f)] = frames.at(ids[4 + f]);
    t.a = action_from_id(a);
    t.r = r;
    t.terminal = term != 0;
    memory.push(std::move(t));
  }
  return memory;
}

}  // namespace corrxfer
