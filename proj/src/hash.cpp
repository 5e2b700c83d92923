#include "cardioquant/hash.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <memory>

#include "cardioquant/errors.hpp"

namespace cq {

namespace {

std::string digest_to_hex(const unsigned char* d, unsigned int len) {
  static const char* hex = "0123456789abcdef";
  std::string out(static_cast<std::size_t>(len) * 2, '0');
  for (unsigned int i = 0; i < len; ++i) {
    out[2 * i] = hex[d[i] >> 4];
    out[2 * i + 1] = hex[d[i] & 0xf];
  }
  return out;
}

using CtxPtr = std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)>;

CtxPtr new_sha256_ctx() {
  CtxPtr ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 context initialization failed");
  }
  return ctx;
}

}  // namespace

std::string sha256_hex(const void* data, std::size_t len) {
  auto ctx = new_sha256_ctx();
  if (EVP_DigestUpdate(ctx.get(), data, len) != 1) throw Error("sha256 update failed");
  unsigned char d[EVP_MAX_MD_SIZE];
  unsigned int dlen = 0;
  if (EVP_DigestFinal_ex(ctx.get(), d, &dlen) != 1) throw Error("sha256 final failed");
  return digest_to_hex(d, dlen);
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  return sha256_hex(bytes.data(), bytes.size());
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open for hashing");
  auto ctx = new_sha256_ctx();
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    const std::streamsize got = in.gcount();
    if (got > 0 && EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(got)) != 1) {
      throw Error("sha256 update failed");
    }
  }
  unsigned char d[EVP_MAX_MD_SIZE];
  unsigned int dlen = 0;
  if (EVP_DigestFinal_ex(ctx.get(), d, &dlen) != 1) throw Error("sha256 final failed");
  return digest_to_hex(d, dlen);
}

}  // namespace cq
