//! Bit-exact message encoding and decoding.
//!
//! Everything here is an immutable value; encode and decode are pure
//! functions, so the types are freely shareable across threads.

mod message;
mod name;
mod record;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use message::{decode, encode, DnsHeader, DnsMessage, Question, Rcode};
pub use name::{DomainName, MAX_LABEL_LEN, MAX_NAME_WIRE_LEN};
pub use record::{
    canonical_rrset_bytes, Dnskey, Ds, EdnsOption, RRset, Rdata, RecordType, ResourceRecord,
    Rrsig, CLASS_IN, DNSKEY_FLAG_SEP, DNSKEY_FLAG_ZONE_KEY, EDNS_BRIDGE_AVAILABLE,
    EDNS_DS_ABSENT,
};

/// Which part of a message a codec error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Section {
    Header,
    Question,
    Answer,
    Authority,
    Additional,
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Section::Header => "header",
            Section::Question => "question",
            Section::Answer => "answer",
            Section::Authority => "authority",
            Section::Additional => "additional",
        };
        f.write_str(s)
    }
}

/// Codec failures.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("name exceeds 255 wire bytes")]
    NameTooLong,
    #[error("unsupported record type {0}")]
    UnsupportedType(u16),
    #[error("unsupported class {0}")]
    UnsupportedClass(u16),
    #[error("input ends inside the {0} section")]
    Truncated(Section),
    #[error("malformed label in the {0} section")]
    MalformedLabel(Section),
    #[error("section count does not match records in the {0} section")]
    CountMismatch(Section),
    #[error("OPT record out of place in the {0} section")]
    MisplacedOpt(Section),
    #[error("records do not share owner/type/class")]
    MixedRrset,
    #[error("empty rrset")]
    EmptyRrset,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn name(s: &str) -> DomainName {
        DomainName::parse(s).unwrap()
    }

    #[test]
    fn zero_txid_query_header_bytes() {
        let msg = DnsMessage::query(0, name("example.com"), RecordType::A);
        let bytes = encode(&msg).unwrap();
        // txid 0 and QR=0 leave the first four bytes zero.
        assert_eq!(&bytes[..4], &[0, 0, 0, 0]);
        assert_eq!(&bytes[4..6], &[0, 1]); // QDCOUNT
        assert_eq!(&bytes[6..12], &[0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn question_section_wire_bytes() {
        let msg = DnsMessage::query(0x1234, name("www.example.com"), RecordType::A);
        let bytes = encode(&msg).unwrap();
        let expected: &[u8] = &[
            0x03, 0x77, 0x77, 0x77, 0x07, 0x65, 0x78, 0x61, 0x6D, 0x70, 0x6C, 0x65, 0x03, 0x63,
            0x6F, 0x6D, 0x00, 0x00, 0x01, 0x00, 0x01,
        ];
        assert_eq!(&bytes[12..], expected);
    }

    #[test]
    fn truncated_header_rejected() {
        assert_eq!(
            decode(&[0u8; 11]),
            Err(WireError::Truncated(Section::Header))
        );
        assert!(decode(&[0u8; 12]).is_ok());
    }

    #[test]
    fn count_mismatch_names_the_section() {
        let mut msg = DnsMessage::query(7, name("example.com"), RecordType::A);
        msg.header.response = true;
        msg.answers.push(ResourceRecord::new(
            name("example.com"),
            60,
            Rdata::A(Ipv4Addr::new(192, 0, 2, 1)),
        ));
        let mut bytes = encode(&msg).unwrap();
        // Bump ANCOUNT to 2 while only one answer is present.
        bytes[7] = 2;
        assert_eq!(
            decode(&bytes),
            Err(WireError::CountMismatch(Section::Answer))
        );
    }

    #[test]
    fn trailing_bytes_rejected() {
        let msg = DnsMessage::query(7, name("example.com"), RecordType::A);
        let mut bytes = encode(&msg).unwrap();
        bytes.push(0xFF);
        assert_eq!(
            decode(&bytes),
            Err(WireError::CountMismatch(Section::Additional))
        );
    }

    #[test]
    fn unknown_rtype_rejected() {
        let msg = DnsMessage::query(7, name("example.com"), RecordType::A);
        let mut bytes = encode(&msg).unwrap();
        let qtype_at = bytes.len() - 4;
        bytes[qtype_at] = 0;
        bytes[qtype_at + 1] = 16; // TXT
        assert_eq!(decode(&bytes), Err(WireError::UnsupportedType(16)));
    }

    #[test]
    fn compression_pointer_accepted_on_decode() {
        // Hand-assembled response: question www.example.com A, one answer
        // whose owner is a pointer to the question name.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&[0x00, 0x07, 0x80, 0x00, 0x00, 0x01, 0x00, 0x01, 0, 0, 0, 0]);
        bytes.extend_from_slice(b"\x03www\x07example\x03com\x00");
        bytes.extend_from_slice(&[0x00, 0x01, 0x00, 0x01]);
        bytes.extend_from_slice(&[0xC0, 0x0C]); // pointer to offset 12
        bytes.extend_from_slice(&[0x00, 0x01, 0x00, 0x01]);
        bytes.extend_from_slice(&[0x00, 0x00, 0x00, 0x3C]);
        bytes.extend_from_slice(&[0x00, 0x04, 192, 0, 2, 1]);
        let msg = decode(&bytes).unwrap();
        assert_eq!(msg.answers.len(), 1);
        assert_eq!(msg.answers[0].owner, name("www.example.com"));
        assert_eq!(msg.answers[0].rdata, Rdata::A(Ipv4Addr::new(192, 0, 2, 1)));
        // Re-encode is pointer-free but decodes to the same message.
        let reencoded = encode(&msg).unwrap();
        assert_eq!(decode(&reencoded).unwrap(), msg);
    }

    #[test]
    fn forward_pointer_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&[0x00, 0x07, 0x00, 0x00, 0x00, 0x01, 0, 0, 0, 0, 0, 0]);
        bytes.extend_from_slice(&[0xC0, 0x0C]); // points at itself
        bytes.extend_from_slice(&[0x00, 0x01, 0x00, 0x01]);
        assert_eq!(
            decode(&bytes),
            Err(WireError::MalformedLabel(Section::Question))
        );
    }

    #[test]
    fn edns_options_round_trip_and_stay_last() {
        let mut msg = DnsMessage::query(9, name("example.com"), RecordType::A);
        msg.push_edns(EdnsOption::ds_absent());
        msg.push_edns(EdnsOption::bridge_available(8530));
        msg.additional.push(ResourceRecord::new(
            name("ns.example.com"),
            60,
            Rdata::A(Ipv4Addr::new(192, 0, 2, 53)),
        ));
        let bytes = encode(&msg).unwrap();
        let decoded = decode(&bytes).unwrap();
        assert_eq!(decoded, msg);
        assert!(decoded.has_ds_absent_flag());
        assert_eq!(decoded.bridge_advert(), Some(8530));
    }

    #[test]
    fn opt_cannot_ride_in_answer_section() {
        let mut msg = DnsMessage::query(9, name("example.com"), RecordType::A);
        msg.answers.push(ResourceRecord::new(
            DomainName::root(),
            0,
            Rdata::Opt(vec![EdnsOption::ds_absent()]),
        ));
        assert_eq!(
            encode(&msg),
            Err(WireError::MisplacedOpt(Section::Additional))
        );
    }

    #[test]
    fn encode_length_is_header_plus_sections() {
        let mut msg = DnsMessage::query(3, name("example.com"), RecordType::Ns);
        msg.header.response = true;
        msg.authority.push(ResourceRecord::new(
            name("example.com"),
            60,
            Rdata::Ns(name("ns.example.com")),
        ));
        let bytes = encode(&msg).unwrap();
        let question_len = name("example.com").wire_len() + 4;
        let record_len = name("example.com").wire_len() + 10 + name("ns.example.com").wire_len();
        assert_eq!(bytes.len(), 12 + question_len + record_len);
    }
}
