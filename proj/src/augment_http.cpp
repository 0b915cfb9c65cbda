#include <memory>
#include <stdexcept>

#include <httplib.h>
#include <json.hpp>

#include "revat/data.hpp"

namespace revat::data {

namespace {

class HttpGenerator final : public TextGenerator {
public:
    explicit HttpGenerator(std::string endpoint) : endpoint_(std::move(endpoint)) {}

    std::optional<std::string> generate(const std::string& prompt) override {
        httplib::Client client(endpoint_);
        client.set_connection_timeout(10);
        client.set_read_timeout(60);
        nlohmann::json body{{"prompt", prompt}};
        auto res = client.Post("/generate", body.dump(), "application/json");
        if (!res) {
            throw std::runtime_error("augmentation endpoint unreachable: " + endpoint_);
        }
        if (res->status != 200) {
            throw std::runtime_error("augmentation endpoint returned status " +
                                     std::to_string(res->status));
        }
        auto j = nlohmann::json::parse(res->body);
        if (!j.contains("text")) return std::nullopt;
        return j.at("text").get<std::string>();
    }

private:
    std::string endpoint_;
};

}  // namespace

std::unique_ptr<TextGenerator> make_http_generator(const std::string& endpoint) {
    return std::make_unique<HttpGenerator>(endpoint);
}

}  // namespace revat::data
