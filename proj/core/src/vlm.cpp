#include "crashseq/vlm.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <exception>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "crashseq/error.hpp"

namespace crashseq {

using nlohmann::json;

int parse_vlm_answer(std::string_view text) {
  std::size_t i = 0;
  while (i < text.size() && !std::isalpha(static_cast<unsigned char>(text[i]))) ++i;
  std::string token;
  while (i < text.size() && std::isalpha(static_cast<unsigned char>(text[i]))) {
    token += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i++])));
  }
  if (token == "yes") return 1;
  if (token == "no") return 0;
  throw ResponseParseError("VLM answer is neither yes nor no: \"" + std::string(text.substr(0, 80)) + "\"");
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  return httplib::detail::base64_encode(std::string(bytes.begin(), bytes.end()));
}

std::string build_vlm_request(std::string_view model, std::span<const std::string> images_base64) {
  json body = {{"model", std::string(model)},
               {"prompt", std::string(kVlmPrompt)},
               {"images", std::vector<std::string>(images_base64.begin(), images_base64.end())}};
  return body.dump();
}

VlmClient::VlmClient(VlmClientOptions options) : options_(std::move(options)) {
  const auto& url = options_.endpoint;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw InvalidArgument("VLM endpoint must be an http:// URL: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (options_.max_concurrency < 1) options_.max_concurrency = 1;
}

int VlmClient::query(std::span<const std::vector<std::uint8_t>> frames) const {
  if (frames.empty()) throw InvalidArgument("vlm_query: at least one frame is required");
  std::vector<std::string> images;
  images.reserve(frames.size());
  for (const auto& f : frames) images.push_back(base64_encode(f));
  const std::string body = build_vlm_request(options_.model, images);

  auto delay = options_.backoff;
  std::string last_error;
  for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    httplib::Client client(scheme_host_port_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    const auto res = client.Post(path_, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP status " + std::to_string(res->status);
      continue;
    }
    json reply;
    try {
      reply = json::parse(res->body);
    } catch (const json::parse_error&) {
      throw ResponseParseError("VLM reply is not JSON");
    }
    if (!reply.is_object() || !reply.contains("text") || !reply["text"].is_string()) {
      throw ResponseParseError("VLM reply lacks a string 'text' field");
    }
    return parse_vlm_answer(reply["text"].get<std::string>());
  }
  throw TransportError(options_.endpoint + ": " + last_error + " after " + std::to_string(options_.max_retries + 1) +
                       " attempts");
}

std::vector<int> VlmClient::query_all(std::span<const std::vector<std::vector<std::uint8_t>>> clips) const {
  std::vector<int> results(clips.size(), -1);
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= clips.size()) return;
      try {
        results[i] = query(clips[i]);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  const std::size_t n = std::min(options_.max_concurrency, clips.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < n; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return results;
}

}  // namespace crashseq
