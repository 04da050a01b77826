#include "metaprompt/checkpoint.hpp"

#include <fstream>

#include "metaprompt/binary_io.hpp"

namespace metaprompt {

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  // Write to a sibling file and rename so readers never see a partial file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + tmp.string() + " for writing");
    out.write("MPDM", 4);
    binio::put_u32(out, kCheckpointVersion);
    binio::put_u64(out, ckpt.step);
    binio::put_u32(out, static_cast<std::uint32_t>(ckpt.entries.size()));
    for (const auto& e : ckpt.entries) {
      if (shape_numel(e.shape) != static_cast<std::int64_t>(e.data.size())) {
        throw CheckpointError(CheckpointError::Kind::mismatch, "checkpoint entry " + e.name + " has inconsistent shape");
      }
      binio::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
      out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      binio::put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
      for (auto d : e.shape) binio::put_u32(out, static_cast<std::uint32_t>(d));
      binio::put_f32s(out, e.data);
    }
    if (!out.flush()) throw CheckpointError(CheckpointError::Kind::io, "write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open checkpoint " + path.string());
  const auto truncated = [&](const std::string& what) {
    return CheckpointError(CheckpointError::Kind::truncated,
                           path.string() + ": truncated checkpoint (" + what + ")");
  };
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "MPDM") {
    throw CheckpointError(CheckpointError::Kind::corrupt_header, path.string() + ": corrupt header (bad magic)");
  }
  std::uint32_t version = 0;
  if (!binio::get_u32(in, version)) throw truncated("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::unsupported_version,
                          path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  std::uint32_t count = 0;
  if (!binio::get_u64(in, ckpt.step) || !binio::get_u32(in, count)) throw truncated("header");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    std::uint32_t len = 0, rank = 0;
    if (!binio::get_u32(in, len)) throw truncated("entry " + std::to_string(i));
    if (len > 4096) throw CheckpointError(CheckpointError::Kind::corrupt_header, path.string() + ": implausible entry name length");
    e.name.resize(len);
    if (!in.read(e.name.data(), len) || !binio::get_u32(in, rank)) throw truncated("entry " + std::to_string(i));
    if (rank == 0 || rank > 8) throw CheckpointError(CheckpointError::Kind::corrupt_header, path.string() + ": bad rank for " + e.name);
    e.shape.resize(rank);
    for (auto& d : e.shape) {
      std::uint32_t v;
      if (!binio::get_u32(in, v)) throw truncated(e.name);
      if (v == 0) throw CheckpointError(CheckpointError::Kind::corrupt_header, path.string() + ": zero dimension in " + e.name);
      d = v;
    }
    e.data.resize(static_cast<std::size_t>(shape_numel(e.shape)));
    if (!binio::get_f32s(in, e.data)) throw truncated(e.name + " payload");
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

}  // namespace metaprompt
