#include <gtest/gtest.h>

#include <thread>

#include "test_support.hpp"
#include "vacuform/service.hpp"

using namespace vacuform;

namespace {

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::make_unique<vacuform::testing::TempDir>("service");
    auto m = vacuform::testing::small_model();
    save_checkpoint(*dir_ / "models" / "m1.json", m);
    advisor_ = std::make_unique<Advisor>(*dir_ / "models", *dir_ / "sessions");
    service_ = std::make_unique<AdvisorService>(*advisor_);
    port_ = service_->bind("127.0.0.1", 0);
    thread_ = std::thread([this] { service_->run(); });
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(120, 0);
    for (int i = 0; i < 100 && !client_->Get("/v1/health"); ++i)
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }

  void TearDown() override {
    service_->stop();
    thread_.join();
  }

  static httplib::MultipartFormDataItems suggest_form(int n_views, const std::string& model = "m1") {
    httplib::MultipartFormDataItems items;
    items.push_back({"model_id", model, "", ""});
    items.push_back({"params", R"({"heat_power":60,"heat_time":30,"vacuum_time":4})", "", "application/json"});
    items.push_back({"options", R"({"n_composites":4})", "", "application/json"});
    const auto views = simulate_part({60, 30, 4}, vacuform::testing::small_oracle(), 2).first;
    for (int k = 0; k < n_views; ++k)
      items.push_back({"views", encode_png_bytes(views.views[std::size_t(k) % 17]), std::to_string(k) + ".png",
                       "image/png"});
    return items;
  }

  static std::string session_body(const std::string& id = "") {
    json j = {{"model_id", "m1"},
              {"params", {{"heat_power", 60}, {"heat_time", 30}, {"vacuum_time", 4}}},
              {"oracle", oracle_to_json(vacuform::testing::small_oracle())},
              {"suggest", {{"n_composites", 4}}},
              {"max_cycles", 2}};
    if (!id.empty()) j["id"] = id;
    return j.dump();
  }

  std::unique_ptr<vacuform::testing::TempDir> dir_;
  std::unique_ptr<Advisor> advisor_;
  std::unique_ptr<AdvisorService> service_;
  std::unique_ptr<httplib::Client> client_;
  std::thread thread_;
  int port_ = 0;
};

json body_of(const httplib::Result& r) { return json::parse(r->body); }

}  // namespace

TEST(HttpStatus, ErrorCodesMapToStatuses) {
  EXPECT_EQ(http_status(ErrorCode::validation), 400);
  EXPECT_EQ(http_status(ErrorCode::segmentation), 422);
  EXPECT_EQ(http_status(ErrorCode::not_found), 404);
  EXPECT_EQ(http_status(ErrorCode::conflict), 409);
  EXPECT_EQ(http_status(ErrorCode::training), 500);
}

TEST_F(ServiceTest, HealthAndModels) {
  auto h = client_->Get("/v1/health");
  ASSERT_TRUE(h);
  EXPECT_EQ(h->status, 200);
  EXPECT_EQ(h->get_header_value("Access-Control-Allow-Origin"), "*");
  auto m = client_->Get("/v1/models");
  ASSERT_TRUE(m);
  const auto j = body_of(m);
  ASSERT_EQ(j["models"].size(), 1u);
  EXPECT_EQ(j["models"][0]["id"], "m1");
  EXPECT_FALSE(j["models"][0].contains("path"));
}

TEST_F(ServiceTest, SuggestReturnsSchema) {
  auto r = client_->Post("/v1/suggest", suggest_form(17));
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200) << r->body;
  const auto j = body_of(r);
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_EQ(j["delta_norm"].size(), 3u);
  EXPECT_EQ(j["aggregation"]["n_composites"], 4);
  EXPECT_EQ(j["model_id"], "m1");
  EXPECT_TRUE(j.contains("latency_ms"));
  EXPECT_TRUE(j["new_params"].contains("heat_power"));
}

TEST_F(ServiceTest, SuggestMatchesLibraryCall) {
  auto r = client_->Post("/v1/suggest", suggest_form(17));
  ASSERT_TRUE(r);
  auto m = vacuform::testing::small_model();
  SuggestConfig c;
  c.n_composites = 4;
  // The service decodes PNGs that round-trip the rendered pixels exactly.
  const auto views = simulate_part({60, 30, 4}, vacuform::testing::small_oracle(), 2).first;
  const auto want = suggest(views, {60, 30, 4}, m, c).to_json();
  auto got = body_of(r);
  got.erase("model_id");
  got.erase("latency_ms");
  EXPECT_EQ(got, want);
}

TEST_F(ServiceTest, SixteenViewsIs400WithMessage) {
  auto r = client_->Post("/v1/suggest", suggest_form(16));
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 400);
  const auto j = body_of(r);
  EXPECT_EQ(j["code"], "validation");
  EXPECT_EQ(j["field"], "views");
  EXPECT_NE(j["message"].get<std::string>().find("expected 17 views, got 16"), std::string::npos);
}

TEST_F(ServiceTest, UnknownModelIs404) {
  auto r = client_->Post("/v1/suggest", suggest_form(17, "ghost"));
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 404);
  EXPECT_EQ(body_of(r)["code"], "not_found");
}

TEST_F(ServiceTest, NonMultipartSuggestIs400) {
  auto r = client_->Post("/v1/suggest", "{}", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 400);
}

TEST_F(ServiceTest, SessionLifecycle) {
  auto c = client_->Post("/v1/sessions", session_body("web1"), "application/json");
  ASSERT_TRUE(c);
  ASSERT_EQ(c->status, 201) << c->body;
  EXPECT_EQ(body_of(c)["id"], "web1");
  EXPECT_EQ(body_of(c)["cycles"].size(), 1u);

  auto dup = client_->Post("/v1/sessions", session_body("web1"), "application/json");
  ASSERT_TRUE(dup);
  EXPECT_EQ(dup->status, 409);

  auto cyc = client_->Post("/v1/sessions/web1/cycles", R"({"apply":true})", "application/json");
  ASSERT_TRUE(cyc);
  ASSERT_EQ(cyc->status, 201) << cyc->body;
  EXPECT_EQ(body_of(cyc)["cycle"]["index"], 1);
  EXPECT_EQ(body_of(cyc)["cycle"]["applied"], true);

  auto g = client_->Get("/v1/sessions/web1");
  ASSERT_TRUE(g);
  EXPECT_EQ(g->status, 200);
  EXPECT_EQ(body_of(g)["cycles"].size(), 2u);

  client_->Post("/v1/sessions/web1/cycles", R"({"apply":false})", "application/json");
  auto closed = client_->Post("/v1/sessions/web1/cycles", R"({"apply":false})", "application/json");
  ASSERT_TRUE(closed);
  EXPECT_EQ(closed->status, 409);
}

TEST_F(ServiceTest, SessionErrors) {
  auto g = client_->Get("/v1/sessions/missing");
  ASSERT_TRUE(g);
  EXPECT_EQ(g->status, 404);
  auto bad = client_->Post("/v1/sessions", "{not json", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(body_of(bad)["schema_version"], 1);
  client_->Post("/v1/sessions", session_body("e1"), "application/json");
  auto noapply = client_->Post("/v1/sessions/e1/cycles", R"({"verdict":"good"})", "application/json");
  ASSERT_TRUE(noapply);
  EXPECT_EQ(noapply->status, 400);
  EXPECT_EQ(body_of(noapply)["field"], "apply");
}

TEST_F(ServiceTest, OperatorSessionViaMultipart) {
  auto items = suggest_form(17);
  items.erase(items.begin(), items.begin() + 3);
  items.push_back({"request",
                   R"({"model_id":"m1","simulated":false,"params":{"heat_power":60,"heat_time":30,"vacuum_time":4},)"
                   R"("suggest":{"n_composites":4},"id":"op1"})",
                   "", "application/json"});
  auto c = client_->Post("/v1/sessions", items);
  ASSERT_TRUE(c);
  ASSERT_EQ(c->status, 201) << c->body;
  EXPECT_EQ(body_of(c)["simulated"], false);

  auto none = client_->Post("/v1/sessions/op1/cycles", R"({"apply":true})", "application/json");
  ASSERT_TRUE(none);
  EXPECT_EQ(none->status, 400);

  items.back() = {"request", R"({"apply":true,"verdict":"good"})", "", "application/json"};
  auto cyc = client_->Post("/v1/sessions/op1/cycles", items);
  ASSERT_TRUE(cyc);
  ASSERT_EQ(cyc->status, 201) << cyc->body;
  EXPECT_EQ(body_of(cyc)["cycle"]["verdict"], "good");
}

TEST_F(ServiceTest, CorsPreflight) {
  auto r = client_->Options("/v1/suggest");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 204);
  EXPECT_NE(r->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);
}
