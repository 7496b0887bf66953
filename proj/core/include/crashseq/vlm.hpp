#pragma once

#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace crashseq {

// The question posed to every vision-language model, verbatim.
inline constexpr std::string_view kVlmPrompt =
    "Is there any traffic accident/crash in the video. Write Yes or No";

// Maps the first alphabetic token of a reply, case-folded, to 1 ("yes") or
// 0 ("no"). Anything else throws ResponseParseError.
int parse_vlm_answer(std::string_view text);

// {"model": ..., "prompt": ..., "images": [base64...]}
std::string build_vlm_request(std::string_view model, std::span<const std::string> images_base64);

std::string base64_encode(std::span<const std::uint8_t> bytes);

struct VlmClientOptions {
  std::string endpoint;  // e.g. http://127.0.0.1:8080/v1/generate
  std::string model;
  std::chrono::milliseconds timeout{30000};
  int max_retries = 2;
  std::chrono::milliseconds backoff{250};  // doubled after each retry
  std::size_t max_concurrency = 4;
};

class VlmClient {
 public:
  explicit VlmClient(VlmClientOptions options);

  // One clip: encoded frame images (PNG/JPEG bytes). Transport failures are
  // retried; the final one surfaces as TransportError.
  int query(std::span<const std::vector<std::uint8_t>> frames) const;

  // Many clips with bounded concurrency; result i belongs to clips[i].
  std::vector<int> query_all(std::span<const std::vector<std::vector<std::uint8_t>>> clips) const;

  const VlmClientOptions& options() const { return options_; }

 private:
  VlmClientOptions options_;
  std::string scheme_host_port_;
  std::string path_;
};

}  // namespace crashseq
