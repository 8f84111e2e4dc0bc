#pragma once
// Binary operator cache. Layout: magic "KGDCACHE", format version
// (3 x uint16), config hash (uint64), key, block count and shape (uint32),
// then every block row-major as little-endian (re, im) IEEE-754 double
// pairs, and a trailing CRC-32 of all preceding bytes.

#include "kgd/evolution.hpp"

#include <cstdint>

namespace kgd {

struct CacheVersion {
  std::uint16_t major = 1, minor = 0, patch = 0;
  std::string str() const;
};
inline constexpr CacheVersion kCacheVersion{1, 0, 0};

class CacheError : public KgdError {
 public:
  enum class Kind { io, format, checksum, stale, key };
  CacheError(Kind kind, const std::string& what) : KgdError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Key of a stored propagator family: generator id and (t, s) span.
std::string cache_key(const std::string& generator_id, double t, double s);
/// File name derived from the key (the config hash lives inside the file).
std::string cache_file_name(const std::string& key);

/// Writes the blocks (all of one shape); throws CacheError(io) on failure.
void cache_store(const std::string& path, const std::string& key, std::uint64_t config_hash,
                 const std::vector<Mat>& blocks);

/// Reads the blocks back bit-exactly. Errors: checksum (corrupt or truncated
/// file), stale (config hash mismatch, both hashes in the message), format,
/// key, io.
std::vector<Mat> cache_load(const std::string& path, const std::string& key, std::uint64_t config_hash);

/// Directory from the KGD_CACHE_DIR environment variable, else `fallback`.
std::string cache_directory(const std::string& fallback);
inline constexpr const char* kCacheDirEnv = "KGD_CACHE_DIR";

}  // namespace kgd
