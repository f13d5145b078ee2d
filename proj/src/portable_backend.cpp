#include "agentcr/portable_backend.hpp"

#include <sys/stat.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "agentcr/digest.hpp"
#include "agentcr/text.hpp"

namespace fs = std::filesystem;

namespace agentcr {

namespace {

constexpr std::string_view kTreePrefix = "tree:";
constexpr std::string_view kProcPrefix = "proc:";
constexpr std::string_view kDirHash = "-";

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string hash_file(const fs::path& p, std::uint64_t* size) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot read " + p.string());
  Sha256 h;
  char buf[1 << 16];
  std::uint64_t total = 0;
  while (in) {
    in.read(buf, sizeof buf);
    auto n = in.gcount();
    if (n <= 0) break;
    h.update(std::string_view(buf, static_cast<std::size_t>(n)));
    total += static_cast<std::uint64_t>(n);
  }
  if (size != nullptr) *size = total;
  return h.hex_digest();
}

struct stat lstat_or_throw(const fs::path& p) {
  struct stat st {};
  if (::lstat(p.c_str(), &st) != 0) throw Error(Errc::IoFailure, "lstat failed: " + p.string());
  return st;
}

std::string sandbox_path(const fs::path& root, const fs::path& p) {
  return "/" + fs::relative(p, root).generic_string();
}

fs::path host_path(const fs::path& root, const std::string& sandbox_abs) {
  return root / sandbox_abs.substr(1);
}

bool is_dir_mode(std::uint32_t mode) { return S_ISDIR(mode); }
bool is_link_mode(std::uint32_t mode) { return S_ISLNK(mode); }

std::string_view strip_prefix(const std::string& handle, std::string_view prefix) {
  if (handle.rfind(prefix, 0) != 0) {
    throw Error(Errc::CorruptArtifact, "unexpected artifact handle '" + handle + "'");
  }
  return std::string_view(handle).substr(prefix.size());
}

}  // namespace

std::string render_tree_manifest(const std::vector<TreeEntry>& entries) {
  std::vector<TreeEntry> sorted = entries;
  std::sort(sorted.begin(), sorted.end(),
            [](const TreeEntry& a, const TreeEntry& b) { return a.path < b.path; });
  std::ostringstream out;
  for (const auto& e : sorted) {
    out << escape_field(e.path) << '\t' << std::oct << e.mode << std::dec << '\t'
        << e.content_hash << '\n';
  }
  return out.str();
}

std::vector<TreeEntry> parse_tree_manifest(std::string_view text) {
  std::vector<TreeEntry> entries;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) throw Error(Errc::CorruptArtifact, "unterminated manifest");
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    auto f = split_tabs(line);
    if (f.size() != 3) throw Error(Errc::CorruptArtifact, "bad manifest line");
    entries.push_back({unescape_field(f[0]), parse_int<std::uint32_t>(f[1], "mode", 8),
                       std::string(f[2])});
  }
  return entries;
}

std::vector<TreeEntry> scan_tree(const fs::path& dir) {
  std::vector<TreeEntry> entries;
  if (!fs::exists(dir)) return entries;
  for (auto it = fs::recursive_directory_iterator(dir); it != fs::recursive_directory_iterator();
       ++it) {
    const fs::path& p = it->path();
    struct stat st = lstat_or_throw(p);
    TreeEntry e;
    e.path = sandbox_path(dir, p);
    e.mode = st.st_mode;
    if (S_ISDIR(st.st_mode)) {
      e.content_hash = std::string(kDirHash);
    } else if (S_ISLNK(st.st_mode)) {
      e.content_hash = sha256_hex(fs::read_symlink(p).string());
    } else if (S_ISREG(st.st_mode)) {
      e.content_hash = hash_file(p, nullptr);
    } else {
      continue;  // sockets, fifos, devices are not workspace state
    }
    entries.push_back(std::move(e));
  }
  std::sort(entries.begin(), entries.end(),
            [](const TreeEntry& a, const TreeEntry& b) { return a.path < b.path; });
  return entries;
}

PortableBackend::PortableBackend(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_ / "blobs", ec);
  fs::create_directories(root_ / "trees", ec);
  fs::create_directories(root_ / "procs", ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create store at " + root_.string());
  fs::path meta = root_ / "STORE";
  std::string expected = "hash=" + std::string(kHashName) + "\nformat=1\n";
  if (fs::exists(meta)) {
    if (read_file(meta) != expected) {
      throw Error(Errc::CorruptArtifact, "store at " + root_.string() + " uses another format");
    }
  } else {
    write_atomic(meta, expected);
  }
}

fs::path PortableBackend::blob_path(const std::string& hash) const {
  return root_ / "blobs" / hash.substr(0, 2) / hash;
}

void PortableBackend::write_atomic(const fs::path& dest, std::string_view bytes) {
  std::ostringstream tmp_name;
  tmp_name << dest.filename().string() << ".tmp." << std::this_thread::get_id() << '.'
           << temp_counter_.fetch_add(1);
  fs::path tmp = dest.parent_path() / tmp_name.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoFailure, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::IoFailure, "short write " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, dest, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(Errc::IoFailure, "cannot publish " + dest.string());
  }
}

std::string PortableBackend::put_blob(std::string_view bytes) {
  std::string hash = sha256_hex(bytes);
  fs::path dest = blob_path(hash);
  if (fs::exists(dest)) return hash;
  std::error_code ec;
  fs::create_directories(dest.parent_path(), ec);
  write_atomic(dest, bytes);
  return hash;
}

std::string PortableBackend::read_blob(const std::string& hash) const {
  fs::path p = blob_path(hash);
  if (!fs::exists(p)) throw Error(Errc::CorruptArtifact, "missing blob " + hash);
  std::string bytes = read_file(p);
  if (sha256_hex(bytes) != hash) throw Error(Errc::CorruptArtifact, "blob hash mismatch " + hash);
  return bytes;
}

SnapshotResult PortableBackend::snapshot_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(Errc::IoFailure, "not a directory: " + dir.string());
  std::vector<TreeEntry> entries;
  std::uint64_t logical = 0;
  for (auto it = fs::recursive_directory_iterator(dir); it != fs::recursive_directory_iterator();
       ++it) {
    const fs::path& p = it->path();
    struct stat st = lstat_or_throw(p);
    TreeEntry e;
    e.path = sandbox_path(dir, p);
    e.mode = st.st_mode;
    if (S_ISDIR(st.st_mode)) {
      e.content_hash = std::string(kDirHash);
    } else if (S_ISLNK(st.st_mode)) {
      e.content_hash = put_blob(fs::read_symlink(p).string());
    } else if (S_ISREG(st.st_mode)) {
      std::uint64_t size = 0;
      std::string hash = hash_file(p, &size);
      if (!fs::exists(blob_path(hash))) {
        std::string bytes = read_file(p);
        if (sha256_hex(bytes) != hash) {
          throw Error(Errc::IoFailure, "file changed during snapshot: " + p.string());
        }
        put_blob(bytes);
      }
      e.content_hash = std::move(hash);
      logical += size;
    } else {
      continue;
    }
    entries.push_back(std::move(e));
  }
  std::string manifest = render_tree_manifest(entries);
  std::string tree_hash = sha256_hex(manifest);
  fs::path dest = root_ / "trees" / tree_hash;
  if (!fs::exists(dest)) write_atomic(dest, manifest);
  return {std::string(kTreePrefix) + tree_hash, logical};
}

std::vector<TreeEntry> PortableBackend::tree(const std::string& tree_hash) const {
  fs::path p = root_ / "trees" / tree_hash;
  if (!fs::exists(p)) throw Error(Errc::CorruptArtifact, "missing tree " + tree_hash);
  std::string manifest = read_file(p);
  if (sha256_hex(manifest) != tree_hash) {
    throw Error(Errc::CorruptArtifact, "tree hash mismatch " + tree_hash);
  }
  return parse_tree_manifest(manifest);
}

void PortableBackend::restore_dir(const std::string& tree_hash, const fs::path& dir) {
  std::vector<TreeEntry> entries = tree(tree_hash);

  // Read and verify every blob before the target is touched.
  std::map<std::string, std::string> blobs;
  for (const auto& e : entries) {
    if (is_dir_mode(e.mode) || blobs.contains(e.content_hash)) continue;
    blobs.emplace(e.content_hash, read_blob(e.content_hash));
  }

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create " + dir.string());

  std::map<std::string, std::uint32_t> wanted;
  for (const auto& e : entries) wanted.emplace(e.path, e.mode);

  std::vector<fs::path> existing;
  for (auto it = fs::recursive_directory_iterator(dir); it != fs::recursive_directory_iterator();
       ++it) {
    existing.push_back(it->path());
  }
  for (const auto& p : existing) {
    struct stat st {};
    if (::lstat(p.c_str(), &st) != 0) continue;  // parent already removed
    auto it = wanted.find(sandbox_path(dir, p));
    bool keep = it != wanted.end() && (it->second & S_IFMT) == (st.st_mode & S_IFMT);
    if (!keep) fs::remove_all(p, ec);
    if (ec) throw Error(Errc::IoFailure, "cannot remove " + p.string());
  }

  std::vector<std::pair<fs::path, std::uint32_t>> dirs;
  for (const auto& e : entries) {
    fs::path p = host_path(dir, e.path);
    if (is_dir_mode(e.mode)) {
      fs::create_directories(p, ec);
      if (ec) throw Error(Errc::IoFailure, "cannot create " + p.string());
      fs::permissions(p, fs::perms::owner_all, ec);
      dirs.emplace_back(p, e.mode);
    } else if (is_link_mode(e.mode)) {
      fs::remove(p, ec);
      fs::create_symlink(blobs.at(e.content_hash), p, ec);
      if (ec) throw Error(Errc::IoFailure, "cannot link " + p.string());
    } else {
      {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        const std::string& bytes = blobs.at(e.content_hash);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(Errc::IoFailure, "cannot write " + p.string());
      }
      fs::permissions(p, static_cast<fs::perms>(e.mode & 07777), ec);
    }
  }
  for (auto it = dirs.rbegin(); it != dirs.rend(); ++it) {
    fs::permissions(it->first, static_cast<fs::perms>(it->second & 07777), ec);
  }
}

SnapshotResult PortableBackend::snapshot_fs(const CheckpointTarget& sandbox) {
  return snapshot_dir(sandbox.workspace_root());
}

void PortableBackend::restore_fs(const std::string& handle, CheckpointTarget& target) {
  restore_dir(std::string(strip_prefix(handle, kTreePrefix)), target.workspace_root());
}

SnapshotResult PortableBackend::snapshot_proc(const CheckpointTarget& sandbox) {
  ProcessImage image = sandbox.process_image();
  std::string text = image.serialize();
  std::string hash = sha256_hex(text);
  fs::path dest = root_ / "procs" / hash;
  if (!fs::exists(dest)) write_atomic(dest, text);
  return {std::string(kProcPrefix) + hash, image.total_footprint()};
}

ProcessImage PortableBackend::process_image(const std::string& handle) const {
  std::string hash(strip_prefix(handle, kProcPrefix));
  fs::path p = root_ / "procs" / hash;
  if (!fs::exists(p)) throw Error(Errc::CorruptArtifact, "missing process image " + hash);
  std::string text = read_file(p);
  if (sha256_hex(text) != hash) throw Error(Errc::CorruptArtifact, "image hash mismatch " + hash);
  return ProcessImage::parse(text);
}

void PortableBackend::restore_proc(const std::string& handle, CheckpointTarget& target) {
  target.load_process_image(process_image(handle));
}

std::uint64_t PortableBackend::artifact_size(const std::string& handle) const {
  if (handle.rfind(kProcPrefix, 0) == 0) return process_image(handle).total_footprint();
  std::uint64_t total = 0;
  for (const auto& e : tree(std::string(strip_prefix(handle, kTreePrefix)))) {
    if (S_ISREG(e.mode)) total += fs::file_size(blob_path(e.content_hash));
  }
  return total;
}

std::size_t PortableBackend::blob_count() const {
  std::size_t n = 0;
  for (const auto& entry : fs::recursive_directory_iterator(root_ / "blobs")) {
    if (entry.is_regular_file() && entry.path().filename().string().find(".tmp.") ==
                                       std::string::npos) {
      ++n;
    }
  }
  return n;
}

}  // namespace agentcr
