#include "ngf/errors.hpp"
#include "ngf/protocol.hpp"

#include <json.hpp>
#include <gtest/gtest.h>

#include <fstream>
#include <string>

using namespace ngf;

namespace {

void expect_protocol_error(const std::string& line, bool request) {
    try {
        if (request)
            parse_request(line);
        else
            parse_response(line);
        FAIL() << "accepted: " << line;
    } catch (const ProtocolError& e) {
        // The offending line is quoted.
        EXPECT_NE(std::string(e.what()).find(line), std::string::npos) << e.what();
    }
}

} // namespace

TEST(Protocol, HandshakeRoundTrip) {
    EditRequest hs;
    hs.verb = "handshake";
    EXPECT_EQ(to_line(hs), R"({"v":1,"verb":"handshake"})");
    EXPECT_EQ(parse_request(to_line(hs)), hs);
    EditResponse caps;
    caps.capabilities = std::vector<std::string>{"edit", "embed"};
    EXPECT_EQ(to_line(caps), R"({"capabilities":["edit","embed"],"v":1})");
    EXPECT_EQ(parse_response(to_line(caps)), caps);
}

TEST(Protocol, EditRoundTrip) {
    EditRequest r;
    r.verb = "edit";
    r.id = 7;
    r.render_path = "/tmp/a render.png";
    r.source_path = "/tmp/\"quoted\".png";
    r.face_render_path = "/tmp/f.png";
    r.face_source_path = "/tmp/fs.png";
    r.prompt = "make it élégant\nplease";
    const std::string line = to_line(r);
    EXPECT_EQ(line.find('\n'), std::string::npos);
    EXPECT_EQ(parse_request(line), r);

    r.face_render_path.reset();
    r.face_source_path.reset();
    EXPECT_EQ(parse_request(to_line(r)), r);

    EditResponse resp;
    resp.id = 7;
    resp.edited_path = "/tmp/a.edited.png";
    resp.face_edited_path = "/tmp/f.edited.png";
    EXPECT_EQ(parse_response(to_line(resp)), resp);
}

TEST(Protocol, EmbedAndErrorRoundTrip) {
    EditRequest r;
    r.verb = "embed";
    r.id = 3;
    r.render_path = "/tmp/crop.png";
    EXPECT_EQ(parse_request(to_line(r)), r);
    EditResponse e;
    e.id = 3;
    e.embedding = std::vector<double>{0.1, -2.5e-7, 1e300, 0.0};
    EXPECT_EQ(parse_response(to_line(e)), e);
    EditResponse err;
    err.id = 3;
    err.error = "cannot read /tmp/crop.png";
    EXPECT_EQ(parse_response(to_line(err)), err);
}

TEST(Protocol, RejectsMalformedRequests) {
    for (const char* line : {
             "not json",
             "[1,2]",
             R"({"verb":"handshake"})",
             R"({"v":2,"verb":"handshake"})",
             R"({"v":1,"verb":"handshake","id":1})",
             R"({"v":1,"verb":"paint","id":1,"render_path":"a"})",
             R"({"v":1,"verb":"edit","render_path":"a","source_path":"b"})",
             R"({"v":1,"verb":"edit","id":"1","render_path":"a","source_path":"b"})",
             R"({"v":1,"verb":"edit","id":1,"render_path":"a"})",
             R"({"v":1,"verb":"edit","id":1,"render_path":"a","source_path":"b","face_render_path":"c"})",
             R"({"v":1,"verb":"edit","id":1,"render_path":"a","source_path":"b","extra":0})",
             R"({"v":1,"verb":"embed","id":1,"render_path":5})",
         })
        expect_protocol_error(line, true);
}

TEST(Protocol, RejectsMalformedResponses) {
    for (const char* line : {
             R"({"v":1})",
             R"({"v":1,"id":1})",
             R"({"v":1,"edited_path":"x"})",
             R"({"v":1,"id":1,"edited_path":"x","error":"y"})",
             R"({"v":1,"id":1,"face_edited_path":"x"})",
             R"({"v":1,"id":1,"embedding":[1,"a"]})",
             R"({"v":1,"capabilities":"edit"})",
             R"({"v":1,"id":1.5,"edited_path":"x"})",
             R"({"v":1,"id":1,"edited_path":"x","note":1})",
         })
        expect_protocol_error(line, false);
}

TEST(Protocol, SerializationIsCanonical) {
    // Equal messages serialize to equal bytes regardless of how they were built.
    const EditResponse a = parse_response(R"({"id":4,"v":1,"edited_path":"p"})");
    EditResponse b;
    b.edited_path = "p";
    b.id = 4;
    EXPECT_EQ(to_line(a), to_line(b));
    EXPECT_EQ(to_line(a), R"({"edited_path":"p","id":4,"v":1})");
}
