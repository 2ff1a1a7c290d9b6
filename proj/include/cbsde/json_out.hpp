#pragma once

#include <cstdio>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

namespace cbsde {

/// Deterministic JSON document builder for machine-readable outputs: object
/// keys are emitted sorted and floating-point values with 17 significant
/// digits, so identical runs produce byte-identical files.
class JsonValue {
public:
    using Array = std::vector<JsonValue>;
    using Object = std::map<std::string, JsonValue>;

    JsonValue() : v_(nullptr) {}
    JsonValue(std::nullptr_t) : v_(nullptr) {}
    JsonValue(bool b) : v_(b) {}
    JsonValue(int i) : v_(static_cast<long long>(i)) {}
    JsonValue(long long i) : v_(i) {}
    JsonValue(std::size_t i) : v_(static_cast<long long>(i)) {}
    JsonValue(double d) : v_(d) {}
    JsonValue(const char* s) : v_(std::string(s)) {}
    JsonValue(std::string s) : v_(std::move(s)) {}
    JsonValue(Array a) : v_(std::move(a)) {}
    JsonValue(Object o) : v_(std::move(o)) {}

    static JsonValue array() { return JsonValue(Array{}); }
    static JsonValue object() { return JsonValue(Object{}); }
    template <class T>
    static JsonValue array_of(const std::vector<T>& xs) {
        Array a;
        for (const auto& x : xs) a.emplace_back(x);
        return JsonValue(std::move(a));
    }

    JsonValue& operator[](const std::string& key) { return std::get<Object>(v_)[key]; }
    void push_back(JsonValue v) { std::get<Array>(v_).push_back(std::move(v)); }

    std::string dump(int indent = 0) const {
        std::string out;
        write(out, indent, 0);
        out.push_back('\n');
        return out;
    }

private:
    static void write_escaped(std::string& out, const std::string& s) {
        out.push_back('"');
        for (char c : s) {
            switch (c) {
                case '"': out += "\\\""; break;
                case '\\': out += "\\\\"; break;
                case '\n': out += "\\n"; break;
                case '\t': out += "\\t"; break;
                default: out.push_back(c);
            }
        }
        out.push_back('"');
    }

    void write(std::string& out, int indent, int depth) const {
        const std::string pad(static_cast<std::size_t>(indent) * (depth + 1), ' ');
        const std::string padc(static_cast<std::size_t>(indent) * depth, ' ');
        const char* nl = indent ? "\n" : "";
        if (std::holds_alternative<std::nullptr_t>(v_)) {
            out += "null";
        } else if (std::holds_alternative<bool>(v_)) {
            out += std::get<bool>(v_) ? "true" : "false";
        } else if (std::holds_alternative<long long>(v_)) {
            out += std::to_string(std::get<long long>(v_));
        } else if (std::holds_alternative<double>(v_)) {
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", std::get<double>(v_));
            out += buf;
        } else if (std::holds_alternative<std::string>(v_)) {
            write_escaped(out, std::get<std::string>(v_));
        } else if (std::holds_alternative<Array>(v_)) {
            const auto& a = std::get<Array>(v_);
            if (a.empty()) {
                out += "[]";
                return;
            }
            out += "[";
            out += nl;
            for (std::size_t i = 0; i < a.size(); ++i) {
                if (indent) out += pad;
                a[i].write(out, indent, depth + 1);
                if (i + 1 < a.size()) out += ",";
                out += nl;
            }
            if (indent) out += padc;
            out += "]";
        } else {
            const auto& o = std::get<Object>(v_);
            if (o.empty()) {
                out += "{}";
                return;
            }
            out += "{";
            out += nl;
            std::size_t i = 0;
            for (const auto& [k, val] : o) {
                if (indent) out += pad;
                write_escaped(out, k);
                out += indent ? ": " : ":";
                val.write(out, indent, depth + 1);
                if (++i < o.size()) out += ",";
                out += nl;
            }
            if (indent) out += padc;
            out += "}";
        }
    }

    std::variant<std::nullptr_t, bool, long long, double, std::string, Array, Object> v_;
};

}  // namespace cbsde
