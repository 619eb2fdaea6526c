#include "faith/http.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <set>
#include <cmath>
#include <thread>

using namespace faith;
using namespace std::chrono_literals;

namespace {

RetryPolicy fast_retry(int max_retries = 3) {
    RetryPolicy p;
    p.max_retries = max_retries;
    p.base_delay = 1ms;
    return p;
}

GenerationRequest request(std::string prompt, bool logprobs = false) {
    GenerationRequest r;
    r.prompt = std::move(prompt);
    r.want_logprobs = logprobs;
    return r;
}

// Local HTTP server on an ephemeral port, stopped on destruction.
class StubServer {
  public:
    StubServer() { port_ = server_.bind_to_any_port("127.0.0.1"); }
    ~StubServer() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }
    httplib::Server& server() { return server_; }
    void start() {
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }

  private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

HttpConfig http_cfg(const std::string& url, std::chrono::milliseconds timeout = 5000ms) {
    HttpConfig c;
    c.url = url;
    c.api_key = "sk-test";
    c.model = "stub-model";
    c.timeout = timeout;
    return c;
}

const char* kChatOk =
    R"({"choices":[{"message":{"role":"assistant","content":"Paris"},"logprobs":{"content":[{"token":"Par","logprob":-0.25},{"token":"is","logprob":-0.5}]}}]})";

}  // namespace

TEST(ScriptedBackend, PromptHashLookup) {
    ScriptedBackend b;
    b.on_prompt("What is the capital of France?", {"Paris", std::nullopt, 0});
    const auto r = generate(b, request("What is the capital of France?"));
    EXPECT_EQ(r.text, "Paris");
    EXPECT_FALSE(r.seq_logprob.has_value());
    EXPECT_EQ(r.retries, 0);
    EXPECT_THROW(generate(b, request("Something else")), EndpointError);
}

TEST(ScriptedBackend, SequenceLogprobIsTokenSum) {
    ScriptedBackend b;
    b.otherwise({"Paris", std::vector<double>{-0.1, -0.2}, 0});
    const auto r = generate(b, request("q", true));
    ASSERT_TRUE(r.seq_logprob.has_value());
    EXPECT_NEAR(*r.seq_logprob, -0.3, 1e-12);
    EXPECT_TRUE(r.logprobs_supported);
    const double p = std::exp(*r.seq_logprob);
    EXPECT_GT(p, 0.0);
    EXPECT_LE(p, 1.0);

    const auto without = generate(b, request("q", false));
    EXPECT_FALSE(without.token_logprobs.has_value());
    EXPECT_FALSE(without.seq_logprob.has_value());
}

TEST(ScriptedBackend, LookupPrecedence) {
    const auto prompt = sampling_prompt({0, "demo?", "demo"}, "Who?");
    ScriptedBackend b;
    b.otherwise({"default", std::nullopt, 0});
    b.on_question("Who?", {"by-question", std::nullopt, 0});
    b.on_question("Who?", {"by-question-ordinal", std::nullopt, 0}, 2);
    b.on_prompt(prompt, {"by-fingerprint", std::nullopt, 0}, 5);
    auto req = request(prompt);
    EXPECT_EQ(generate(b, req).text, "by-question");
    req.ordinal = 2;
    EXPECT_EQ(generate(b, req).text, "by-question-ordinal");
    req.ordinal = 5;
    EXPECT_EQ(generate(b, req).text, "by-fingerprint");
    EXPECT_EQ(generate(b, request("unrelated")).text, "default");
}

TEST(ScriptedBackend, FromJsonAndErrorRules) {
    const auto doc = nlohmann::json::parse(R"({"rules":[
        {"question":"Q1","text":"A1","logprobs":[-0.5]},
        {"question":"Q2","error":400},
        {"default":true,"text":"fallback"}]})");
    auto b = ScriptedBackend::from_json(doc);
    EXPECT_EQ(generate(*b, request("### Question ###: Q1")).text, "A1");
    try {
        generate(*b, request("### Question ###: Q2"), fast_retry());
        FAIL();
    } catch (const EndpointError& e) {
        EXPECT_EQ(e.status(), 400);
    }
    EXPECT_EQ(generate(*b, request("### Question ###: Q3")).text, "fallback");
    EXPECT_THROW(ScriptedBackend::from_json(nlohmann::json::parse(R"({"rules":[{"text":"x"}]})")), PreconditionError);
}

TEST(Generate, ValidatesRequest) {
    ScriptedBackend b;
    b.otherwise({"x", std::nullopt, 0});
    EXPECT_THROW(generate(b, request("")), PreconditionError);
    auto r = request("q");
    r.max_new_tokens = 0;
    EXPECT_THROW(generate(b, r), PreconditionError);
}

TEST(Generate, RejectsPositiveTokenLogprob) {
    ScriptedBackend b;
    b.otherwise({"x", std::vector<double>{-0.1, 0.3}, 0});
    EXPECT_THROW(generate(b, request("q", true)), MalformedResponseError);
}

TEST(Generate, ConcurrencyCapIsRespected) {
    class Slow : public Backend {
      public:
        Slow() : Backend(2) {}
        GenerationResult complete(const GenerationRequest&, std::uint64_t) override {
            const int now = ++active;
            int seen = peak.load();
            while (now > seen && !peak.compare_exchange_weak(seen, now)) {}
            std::this_thread::sleep_for(5ms);
            --active;
            GenerationResult r;
            r.text = "ok";
            return r;
        }
        std::string identity() const override { return "slow"; }
        std::atomic<int> active{0}, peak{0};
    } backend;
    std::vector<std::jthread> workers;
    std::set<std::uint64_t> ids;
    std::mutex m;
    for (int i = 0; i < 8; ++i)
        workers.emplace_back([&] {
            const auto r = generate(backend, request("q"));
            std::lock_guard lock(m);
            ids.insert(r.correlation_id);
        });
    workers.clear();
    EXPECT_LE(backend.peak.load(), 2);
    EXPECT_EQ(ids.size(), 8U);
}

TEST(HttpBackend, RetriesRateLimitThenSucceeds) {
    StubServer stub;
    std::atomic<int> calls{0};
    nlohmann::json seen_body;
    std::string seen_auth;
    stub.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        if (++calls <= 2) {
            res.status = 429;
            res.set_content("slow down", "text/plain");
            return;
        }
        seen_body = nlohmann::json::parse(req.body);
        seen_auth = req.get_header_value("Authorization");
        res.set_content(kChatOk, "application/json");
    });
    stub.start();

    HttpBackend backend(http_cfg(stub.url("/v1/chat/completions")));
    auto req = request("What is the capital of France?", true);
    req.stop_sequences = {"\n###"};
    req.temperature = 0.2;
    const auto r = generate(backend, req, fast_retry());
    EXPECT_EQ(r.text, "Paris");
    EXPECT_EQ(r.retries, 2);
    EXPECT_EQ(calls.load(), 3);
    ASSERT_TRUE(r.seq_logprob.has_value());
    EXPECT_NEAR(*r.seq_logprob, -0.75, 1e-12);
    EXPECT_EQ(seen_auth, "Bearer sk-test");
    EXPECT_EQ(seen_body["model"], "stub-model");
    EXPECT_EQ(seen_body["messages"][0]["content"], "What is the capital of France?");
    EXPECT_EQ(seen_body["temperature"], 0.2);
    EXPECT_EQ(seen_body["stop"][0], "\n###");
    EXPECT_EQ(seen_body["logprobs"], true);
}

TEST(HttpBackend, CompletionsSchemaWithoutLogprobs) {
    StubServer stub;
    stub.server().Post("/v1/completions", [](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        res.set_content(nlohmann::json{{"choices", {{{"text", " echo:" + body["prompt"].get<std::string>()}}}}}.dump(),
                        "application/json");
    });
    stub.start();
    HttpBackend backend(http_cfg(stub.url("/v1/completions")));
    const auto r = generate(backend, request("hi", true), fast_retry());
    EXPECT_EQ(r.text, " echo:hi");
    EXPECT_FALSE(r.logprobs_supported);
    EXPECT_FALSE(r.seq_logprob.has_value());
}

TEST(HttpBackend, ErrorKindsAreDistinguishable) {
    StubServer stub;
    std::atomic<int> server_errors{0}, bad_requests{0};
    stub.server().Post("/bad", [&](const httplib::Request&, httplib::Response& res) {
        ++bad_requests;
        res.status = 400;
    });
    stub.server().Post("/down", [&](const httplib::Request&, httplib::Response& res) {
        ++server_errors;
        res.status = 503;
    });
    stub.server().Post("/garbage", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("<html>not json</html>", "text/html");
    });
    stub.server().Post("/schema", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"result":"Paris"})", "application/json");
    });
    stub.server().Post("/slow", [](const httplib::Request&, httplib::Response& res) {
        std::this_thread::sleep_for(1500ms);
        res.set_content(kChatOk, "application/json");
    });
    stub.start();

    {
        HttpBackend b(http_cfg(stub.url("/bad")));
        EXPECT_THROW(generate(b, request("q"), fast_retry()), EndpointError);
        EXPECT_EQ(bad_requests.load(), 1);
    }
    {
        HttpBackend b(http_cfg(stub.url("/down")));
        try {
            generate(b, request("q"), fast_retry(2));
            FAIL();
        } catch (const EndpointError& e) {
            EXPECT_EQ(e.status(), 503);
        }
        EXPECT_EQ(server_errors.load(), 3);
    }
    {
        HttpBackend b(http_cfg(stub.url("/garbage")));
        EXPECT_THROW(generate(b, request("q"), fast_retry()), MalformedResponseError);
    }
    {
        HttpBackend b(http_cfg(stub.url("/schema")));
        EXPECT_THROW(generate(b, request("q"), fast_retry()), MalformedResponseError);
    }
    {
        HttpBackend b(http_cfg(stub.url("/slow"), 300ms));
        EXPECT_THROW(generate(b, request("q"), fast_retry(0)), TimeoutError);
    }
}

TEST(HttpBackend, ConnectionRefusedIsTransportError) {
    // Nothing listens on port 1; the connect is refused immediately.
    HttpBackend b(http_cfg("http://127.0.0.1:1/v1/chat/completions", 1000ms));
    EXPECT_THROW(generate(b, request("q"), fast_retry(1)), TransportError);
}

TEST(HttpEmbedder, ParsesIndexedVectors) {
    StubServer stub;
    stub.server().Post("/v1/embeddings", [](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        nlohmann::json data = nlohmann::json::array();
        const auto n = body["input"].size();
        for (std::size_t i = n; i-- > 0;)
            data.push_back({{"index", i}, {"embedding", {static_cast<double>(i + 1), 0.0}}});
        res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
    });
    stub.start();
    HttpEmbedder e(http_cfg(stub.url("/v1/embeddings")), 2, fast_retry());
    const std::vector<std::string> texts{"a", "b", "c"};
    const auto out = e.embed_batch(texts);
    ASSERT_EQ(out.size(), 3U);
    EXPECT_EQ(out[0][0], 1.0f);
    EXPECT_EQ(out[2][0], 3.0f);
}

TEST(SampleK, SixSamplesInExemplarOrder) {
    std::vector<Exemplar> pool;
    for (int i = 0; i < 10; ++i) pool.push_back({i, "demo question " + std::to_string(i), "demo " + std::to_string(i)});
    ScriptedBackend b;
    for (int k = 0; k < 6; ++k)
        b.on_question("Who?", {"answer " + std::to_string(k), std::vector<double>{-0.1 * (k + 1)}, 0}, k);
    SamplingOptions opt;
    opt.seed = 42;
    const auto set = sample_k(b, "q1", "Who?", pool, opt);
    ASSERT_EQ(set.k(), 6U);
    EXPECT_TRUE(set.has_logprobs());
    const auto chosen = select_exemplars(pool, 6, 42);
    for (std::size_t k = 0; k < 6; ++k) {
        EXPECT_EQ(set.responses[k].raw_text, "answer " + std::to_string(k));
        EXPECT_EQ(set.responses[k].exemplar_id, chosen[k].id);
        EXPECT_NEAR(*set.responses[k].seq_logprob, -0.1 * static_cast<double>(k + 1), 1e-12);
        EXPECT_EQ(set.responses[k].temperature, 0.2);
        if (k > 0) {
            EXPECT_LT(chosen[k - 1].id, chosen[k].id);
        }
    }
    EXPECT_EQ(select_exemplars(pool, 6, 42)[0].id, chosen[0].id);
}

TEST(SampleK, Boundaries) {
    std::vector<Exemplar> pool{{1, "a?", "a"}, {2, "b?", "b"}, {3, "c?", "c"}, {4, "d?", "d"}};
    ScriptedBackend b;
    b.otherwise({"x", std::nullopt, 0});
    SamplingOptions opt;
    opt.k = 1;
    EXPECT_EQ(sample_k(b, "q", "Q", pool, opt).k(), 1U);
    opt.k = 6;
    EXPECT_THROW(sample_k(b, "q", "Q", pool, opt), PreconditionError);
}

TEST(SampleK, FailureCarriesPartialResponses) {
    std::vector<Exemplar> pool;
    for (int i = 0; i < 6; ++i) pool.push_back({i, "d?", "d"});
    ScriptedBackend b;
    b.on_question("Q", {"fine", std::nullopt, 0});
    b.on_question("Q", {"", std::nullopt, 400}, 3);
    SamplingOptions opt;
    opt.retry = fast_retry();
    try {
        sample_k(b, "q", "Q", pool, opt);
        FAIL();
    } catch (const SamplingError& e) {
        EXPECT_EQ(e.partial().size(), 3U);
    }
}

TEST(FinalQuestion, ExtractsLastQuestionLine) {
    EXPECT_EQ(final_question(sampling_prompt({0, "first?", "x"}, "second?")), "second?");
    EXPECT_EQ(final_question(estimator_prompt("only?")), "only?");
    EXPECT_EQ(final_question("no markers"), "");
}
