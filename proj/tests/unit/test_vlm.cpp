#include <gtest/gtest.h>

#include <atomic>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include <crashseq/error.hpp>
#include <crashseq/vlm.hpp>

using namespace crashseq;

namespace {

// Replies {"text": answer(body)} on /gen; answer may also sleep or fail.
class MockServer {
 public:
  using Handler = std::function<void(const nlohmann::json&, httplib::Response&)>;

  explicit MockServer(Handler h) : handler_(std::move(h)) {
    server_.Post("/gen", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests;
      handler_(nlohmann::json::parse(req.body), res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockServer() {
    server_.stop();
    thread_.join();
  }

  VlmClientOptions options() const {
    VlmClientOptions o;
    o.endpoint = "http://127.0.0.1:" + std::to_string(port_) + "/gen";
    o.model = "mock";
    o.timeout = std::chrono::milliseconds(500);
    o.backoff = std::chrono::milliseconds(5);
    return o;
  }

  std::atomic<int> requests{0};

 private:
  Handler handler_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

void reply(httplib::Response& res, const std::string& text) {
  res.set_content(nlohmann::json{{"text", text}}.dump(), "application/json");
}

const std::vector<std::vector<std::uint8_t>> kFrames{{1, 2, 3}, {4, 5}};

}  // namespace

TEST(VlmAnswer, FirstTokenCaseFolded) {
  EXPECT_EQ(parse_vlm_answer("Yes"), 1);
  EXPECT_EQ(parse_vlm_answer("no."), 0);
  EXPECT_EQ(parse_vlm_answer("  YES, there is a crash"), 1);
  EXPECT_EQ(parse_vlm_answer("\"No\""), 0);
  EXPECT_THROW(parse_vlm_answer("It depends"), ResponseParseError);
  EXPECT_THROW(parse_vlm_answer(""), ResponseParseError);
  EXPECT_THROW(parse_vlm_answer("Yesterday"), ResponseParseError);
}

TEST(VlmRequest, Shape) {
  const std::vector<std::string> imgs{"AAA=", "BBB="};
  const auto j = nlohmann::json::parse(build_vlm_request("m1", imgs));
  EXPECT_EQ(j.at("model"), "m1");
  EXPECT_EQ(j.at("prompt").get<std::string>(), std::string(kVlmPrompt));
  EXPECT_EQ(j.at("images"), nlohmann::json(imgs));
  EXPECT_EQ(kVlmPrompt, "Is there any traffic accident/crash in the video. Write Yes or No");
  const std::uint8_t man[] = {'M', 'a', 'n'};
  EXPECT_EQ(base64_encode(man), "TWFu");
  const std::uint8_t ma[] = {'M', 'a'};
  EXPECT_EQ(base64_encode(ma), "TWE=");
}

TEST(VlmClient, AnswersAndPayload) {
  std::mutex mu;
  nlohmann::json seen;
  std::string answer = "Yes";
  MockServer server([&](const nlohmann::json& body, httplib::Response& res) {
    std::lock_guard lock(mu);
    seen = body;
    reply(res, answer);
  });
  const VlmClient client(server.options());
  EXPECT_EQ(client.query(kFrames), 1);
  {
    std::lock_guard lock(mu);
    EXPECT_EQ(seen.at("prompt").get<std::string>(), std::string(kVlmPrompt));
    EXPECT_EQ(seen.at("model"), "mock");
    ASSERT_EQ(seen.at("images").size(), 2u);
    EXPECT_EQ(seen.at("images")[0], base64_encode(kFrames[0]));
    answer = "no.";
  }
  EXPECT_EQ(client.query(kFrames), 0);
  {
    std::lock_guard lock(mu);
    answer = "It depends";
  }
  EXPECT_THROW(client.query(kFrames), ResponseParseError);
}

TEST(VlmClient, TimeoutRetriedThenTransportError) {
  MockServer server([](const nlohmann::json&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(700));
    reply(res, "Yes");
  });
  auto opts = server.options();
  opts.timeout = std::chrono::milliseconds(150);
  opts.max_retries = 2;
  const VlmClient client(opts);
  EXPECT_THROW(client.query(kFrames), TransportError);
  EXPECT_EQ(server.requests.load(), 3);
}

TEST(VlmClient, RecoversAfterTransientFailure) {
  MockServer server([&](const nlohmann::json&, httplib::Response& res) {
    static std::atomic<int> calls{0};
    if (calls++ == 0) {
      res.status = 503;
      return;
    }
    reply(res, "Yes");
  });
  const VlmClient client(server.options());
  EXPECT_EQ(client.query(kFrames), 1);
  EXPECT_EQ(server.requests.load(), 2);
}

TEST(VlmClient, NonJsonReplyIsParseError) {
  MockServer server([](const nlohmann::json&, httplib::Response& res) { res.set_content("Yes", "text/plain"); });
  const VlmClient client(server.options());
  EXPECT_THROW(client.query(kFrames), ResponseParseError);
  EXPECT_EQ(server.requests.load(), 1);
}

TEST(VlmClient, UnreachableEndpoint) {
  VlmClientOptions o;
  o.endpoint = "http://127.0.0.1:1/gen";
  o.timeout = std::chrono::milliseconds(200);
  o.max_retries = 0;
  EXPECT_THROW(VlmClient(o).query(kFrames), TransportError);
  o.endpoint = "not a url";
  EXPECT_THROW(VlmClient{o}, InvalidArgument);
  o.endpoint = "http://127.0.0.1:1/gen";
  EXPECT_THROW(VlmClient(o).query({}), InvalidArgument);
}

TEST(VlmClient, QueryAllKeepsOrderUnderConcurrency) {
  std::atomic<int> in_flight{0};
  std::atomic<int> peak{0};
  MockServer server([&](const nlohmann::json& body, httplib::Response& res) {
    const int now = ++in_flight;
    int p = peak.load();
    while (now > p && !peak.compare_exchange_weak(p, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    --in_flight;
    // one image -> yes, two -> no
    reply(res, body.at("images").size() == 1 ? "Yes" : "No");
  });
  auto opts = server.options();
  opts.max_concurrency = 3;
  const VlmClient client(opts);
  std::vector<std::vector<std::vector<std::uint8_t>>> clips;
  std::vector<int> expected;
  for (int i = 0; i < 12; ++i) {
    const int n = 1 + (i * 7) % 2;
    clips.push_back(std::vector<std::vector<std::uint8_t>>(n, {static_cast<std::uint8_t>(i)}));
    expected.push_back(n == 1 ? 1 : 0);
  }
  EXPECT_EQ(client.query_all(clips), expected);
  EXPECT_LE(peak.load(), 3);
}
