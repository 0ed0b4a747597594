#pragma once

#include <map>
#include <string>
#include <vector>

#include "ptqlab/errors.hpp"

namespace ptqlab {

/// Text template with {slot} placeholders and byte-exact substitution.
class PromptTemplate {
public:
    PromptTemplate() = default;
    explicit PromptTemplate(std::string text, std::string id = "")
        : text_(std::move(text)), id_(std::move(id)) {}

    const std::string& text() const { return text_; }
    const std::string& id() const { return id_; }

    bool has_slot(const std::string& slot) const {
        return text_.find("{" + slot + "}") != std::string::npos;
    }

    void require_slots(const std::vector<std::string>& slots) const {
        for (const auto& s : slots)
            if (!has_slot(s)) throw MissingSlot("template is missing the {" + s + "} slot");
    }

    std::string render(const std::map<std::string, std::string>& values) const {
        std::string out = text_;
        for (const auto& [slot, value] : values) {
            std::string needle = "{" + slot + "}";
            std::size_t pos = 0;
            while ((pos = out.find(needle, pos)) != std::string::npos) {
                out.replace(pos, needle.size(), value);
                pos += value.size();
            }
        }
        return out;
    }

private:
    std::string text_;
    std::string id_;
};

using ChatTemplate = PromptTemplate;

} // namespace ptqlab
