//! Message structure and the binary codec.
//!
//! Layout is the classic 12-byte header followed by question, answer,
//! authority and additional sections. Names are emitted uncompressed;
//! the decoder tolerates compression pointers in inputs produced by other
//! software. EDNS options ride in a single OPT record which the codec
//! keeps at the end of the additional section and surfaces as
//! [`DnsMessage::edns`].

use serde::{Deserialize, Serialize};

use super::name::DomainName;
use super::record::{
    Dnskey, Ds, EdnsOption, RRset, Rdata, RecordType, ResourceRecord, Rrsig, CLASS_IN,
};
use super::{Section, WireError};

/// Response codes the artifact distinguishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rcode {
    NoError,
    FormErr,
    ServFail,
    NxDomain,
    Refused,
    Other(u8),
}

impl Rcode {
    pub fn code(self) -> u8 {
        match self {
            Rcode::NoError => 0,
            Rcode::FormErr => 1,
            Rcode::ServFail => 2,
            Rcode::NxDomain => 3,
            Rcode::Refused => 5,
            Rcode::Other(v) => v & 0x0F,
        }
    }

    pub fn from_code(code: u8) -> Self {
        match code & 0x0F {
            0 => Rcode::NoError,
            1 => Rcode::FormErr,
            2 => Rcode::ServFail,
            3 => Rcode::NxDomain,
            5 => Rcode::Refused,
            other => Rcode::Other(other),
        }
    }
}

/// Header fields the protocol uses. Section counts are not stored; the
/// encoder writes them from the actual section lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsHeader {
    pub txid: u16,
    pub response: bool,
    pub recursion_desired: bool,
    pub authentic_data: bool,
    pub checking_disabled: bool,
    pub rcode: Rcode,
}

impl DnsHeader {
    pub fn query(txid: u16) -> Self {
        DnsHeader {
            txid,
            response: false,
            recursion_desired: false,
            authentic_data: false,
            checking_disabled: false,
            rcode: Rcode::NoError,
        }
    }

    pub fn response_to(query: &DnsHeader, rcode: Rcode) -> Self {
        DnsHeader {
            txid: query.txid,
            response: true,
            recursion_desired: query.recursion_desired,
            authentic_data: false,
            checking_disabled: query.checking_disabled,
            rcode,
        }
    }

    fn flags_word(&self) -> u16 {
        let mut flags = 0u16;
        if self.response {
            flags |= 1 << 15;
        }
        if self.recursion_desired {
            flags |= 1 << 8;
        }
        if self.authentic_data {
            flags |= 1 << 5;
        }
        if self.checking_disabled {
            flags |= 1 << 4;
        }
        flags | self.rcode.code() as u16
    }

    fn from_flags_word(txid: u16, flags: u16) -> Self {
        DnsHeader {
            txid,
            response: flags & (1 << 15) != 0,
            recursion_desired: flags & (1 << 8) != 0,
            authentic_data: flags & (1 << 5) != 0,
            checking_disabled: flags & (1 << 4) != 0,
            rcode: Rcode::from_code((flags & 0x0F) as u8),
        }
    }
}

/// The question section entry; class is implicitly IN.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub name: DomainName,
    pub rtype: RecordType,
}

/// A complete message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsMessage {
    pub header: DnsHeader,
    pub question: Option<Question>,
    pub answers: Vec<ResourceRecord>,
    pub authority: Vec<ResourceRecord>,
    pub additional: Vec<ResourceRecord>,
    /// EDNS options, present iff the message carries an OPT record.
    pub edns: Option<Vec<EdnsOption>>,
}

/// UDP payload size advertised in the OPT record class field.
const EDNS_UDP_SIZE: u16 = 1232;

impl DnsMessage {
    pub fn query(txid: u16, name: DomainName, rtype: RecordType) -> Self {
        DnsMessage {
            header: DnsHeader::query(txid),
            question: Some(Question { name, rtype }),
            answers: Vec::new(),
            authority: Vec::new(),
            additional: Vec::new(),
            edns: None,
        }
    }

    /// Appends an EDNS option, materializing the OPT record on encode.
    pub fn push_edns(&mut self, option: EdnsOption) {
        self.edns.get_or_insert_with(Vec::new).push(option);
    }

    pub fn edns_option(&self, code: u16) -> Option<&EdnsOption> {
        self.edns
            .as_ref()
            .and_then(|opts| opts.iter().find(|o| o.code == code))
    }

    pub fn has_ds_absent_flag(&self) -> bool {
        self.edns_option(super::record::EDNS_DS_ABSENT).is_some()
    }

    pub fn bridge_advert(&self) -> Option<u16> {
        self.edns_option(super::record::EDNS_BRIDGE_AVAILABLE)
            .and_then(|o| o.bridge_port())
    }

    /// Records of one type owned by one name, grouped as an RRset.
    pub fn find_rrset(&self, owner: &DomainName, rtype: RecordType) -> Option<RRset> {
        let matching: Vec<ResourceRecord> = self
            .sections()
            .flat_map(|(_, recs)| recs.iter())
            .filter(|r| r.rtype() == rtype && &r.owner == owner)
            .cloned()
            .collect();
        if matching.is_empty() {
            None
        } else {
            RRset::from_records(&matching).ok()
        }
    }

    /// The signature covering `rtype` at `owner`, if present.
    pub fn find_rrsig(&self, owner: &DomainName, covered: RecordType) -> Option<Rrsig> {
        self.sections()
            .flat_map(|(_, recs)| recs.iter())
            .find_map(|r| match &r.rdata {
                Rdata::Rrsig(sig) if sig.covered_type == covered && &r.owner == owner => {
                    Some(sig.clone())
                }
                _ => None,
            })
    }

    fn sections(&self) -> impl Iterator<Item = (Section, &Vec<ResourceRecord>)> {
        [
            (Section::Answer, &self.answers),
            (Section::Authority, &self.authority),
            (Section::Additional, &self.additional),
        ]
        .into_iter()
    }
}

/// Encodes a message to its wire form.
///
/// Output is deterministic: sections in order, no name compression, counts
/// written from actual lengths, OPT (when EDNS options are present) as the
/// last additional record.
pub fn encode(msg: &DnsMessage) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(128);
    let opt_count = usize::from(msg.edns.is_some());
    out.extend_from_slice(&msg.header.txid.to_be_bytes());
    out.extend_from_slice(&msg.header.flags_word().to_be_bytes());
    out.extend_from_slice(&(u16::from(msg.question.is_some())).to_be_bytes());
    out.extend_from_slice(&(msg.answers.len() as u16).to_be_bytes());
    out.extend_from_slice(&(msg.authority.len() as u16).to_be_bytes());
    out.extend_from_slice(&((msg.additional.len() + opt_count) as u16).to_be_bytes());

    if let Some(q) = &msg.question {
        encode_name(&mut out, &q.name)?;
        out.extend_from_slice(&q.rtype.code().to_be_bytes());
        out.extend_from_slice(&CLASS_IN.to_be_bytes());
    }
    for rec in msg.answers.iter().chain(&msg.authority).chain(&msg.additional) {
        if rec.rtype() == RecordType::Opt {
            // OPT is carried via the edns field, never as a loose record.
            return Err(WireError::MisplacedOpt(Section::Additional));
        }
        encode_record(&mut out, rec)?;
    }
    if let Some(options) = &msg.edns {
        let opt = ResourceRecord::new(DomainName::root(), 0, Rdata::Opt(options.clone()));
        encode_record(&mut out, &opt)?;
    }
    Ok(out)
}

fn encode_name(out: &mut Vec<u8>, name: &DomainName) -> Result<(), WireError> {
    if name.wire_len() > super::name::MAX_NAME_WIRE_LEN {
        return Err(WireError::NameTooLong);
    }
    out.extend_from_slice(&name.to_wire());
    Ok(())
}

fn encode_record(out: &mut Vec<u8>, rec: &ResourceRecord) -> Result<(), WireError> {
    encode_name(out, &rec.owner)?;
    out.extend_from_slice(&rec.rtype().code().to_be_bytes());
    let class = match &rec.rdata {
        Rdata::Opt(_) => EDNS_UDP_SIZE,
        _ => CLASS_IN,
    };
    out.extend_from_slice(&class.to_be_bytes());
    out.extend_from_slice(&rec.ttl.to_be_bytes());
    let rdata = rec.rdata.encode(false);
    out.extend_from_slice(&(rdata.len() as u16).to_be_bytes());
    out.extend_from_slice(&rdata);
    Ok(())
}

/// Decodes a wire-form message.
///
/// Accepts compression pointers in names for interoperability even though
/// [`encode`] never emits them. Section counts must match the bytes present;
/// trailing bytes are rejected.
pub fn decode(bytes: &[u8]) -> Result<DnsMessage, WireError> {
    let mut cursor = Cursor::new(bytes);
    let txid = cursor.read_u16(Section::Header)?;
    let flags = cursor.read_u16(Section::Header)?;
    let qdcount = cursor.read_u16(Section::Header)?;
    let ancount = cursor.read_u16(Section::Header)?;
    let nscount = cursor.read_u16(Section::Header)?;
    let arcount = cursor.read_u16(Section::Header)?;
    if qdcount > 1 {
        return Err(WireError::CountMismatch(Section::Question));
    }

    let question = if qdcount == 1 {
        let name = cursor.read_name(Section::Question)?;
        let rtype = RecordType::from_code(cursor.read_u16(Section::Question)?)?;
        let class = cursor.read_u16(Section::Question)?;
        if class != CLASS_IN {
            return Err(WireError::UnsupportedClass(class));
        }
        Some(Question { name, rtype })
    } else {
        None
    };

    let answers = cursor.read_records(ancount, Section::Answer)?;
    let authority = cursor.read_records(nscount, Section::Authority)?;
    let additional_raw = cursor.read_records(arcount, Section::Additional)?;
    if !cursor.at_end() {
        return Err(WireError::CountMismatch(Section::Additional));
    }

    // Pull the OPT record, if any, out of the additional section.
    let mut additional = Vec::with_capacity(additional_raw.len());
    let mut edns = None;
    for rec in additional_raw {
        match rec.rdata {
            Rdata::Opt(options) => {
                if edns.is_some() {
                    return Err(WireError::MisplacedOpt(Section::Additional));
                }
                edns = Some(options);
            }
            _ => additional.push(rec),
        }
    }
    for rec in answers.iter().chain(&authority) {
        if rec.rtype() == RecordType::Opt {
            return Err(WireError::MisplacedOpt(if answers.contains(rec) {
                Section::Answer
            } else {
                Section::Authority
            }));
        }
    }

    Ok(DnsMessage {
        header: DnsHeader::from_flags_word(txid, flags),
        question,
        answers,
        authority,
        additional,
        edns,
    })
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn read_u8(&mut self, section: Section) -> Result<u8, WireError> {
        let b = *self
            .buf
            .get(self.pos)
            .ok_or(WireError::Truncated(section))?;
        self.pos += 1;
        Ok(b)
    }

    fn read_u16(&mut self, section: Section) -> Result<u16, WireError> {
        let bytes = self.read_slice(2, section)?;
        Ok(u16::from_be_bytes([bytes[0], bytes[1]]))
    }

    fn read_u32(&mut self, section: Section) -> Result<u32, WireError> {
        let bytes = self.read_slice(4, section)?;
        Ok(u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]))
    }

    fn read_u64(&mut self, section: Section) -> Result<u64, WireError> {
        let bytes = self.read_slice(8, section)?;
        let mut arr = [0u8; 8];
        arr.copy_from_slice(bytes);
        Ok(u64::from_be_bytes(arr))
    }

    fn read_slice(&mut self, len: usize, section: Section) -> Result<&'a [u8], WireError> {
        if self.remaining() < len {
            return Err(WireError::Truncated(section));
        }
        let slice = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice)
    }

    /// Reads a possibly-compressed name starting at the cursor.
    fn read_name(&mut self, section: Section) -> Result<DomainName, WireError> {
        let (name, consumed) = parse_name_at(self.buf, self.pos, section)?;
        self.pos += consumed;
        Ok(name)
    }

    fn read_records(
        &mut self,
        count: u16,
        section: Section,
    ) -> Result<Vec<ResourceRecord>, WireError> {
        let mut records = Vec::with_capacity(count as usize);
        for _ in 0..count {
            if self.at_end() {
                // Count promised more records than the message carries.
                return Err(WireError::CountMismatch(section));
            }
            records.push(self.read_record(section)?);
        }
        Ok(records)
    }

    fn read_record(&mut self, section: Section) -> Result<ResourceRecord, WireError> {
        let owner = self.read_name(section)?;
        let rtype = RecordType::from_code(self.read_u16(section)?)?;
        let class = self.read_u16(section)?;
        if rtype != RecordType::Opt && class != CLASS_IN {
            return Err(WireError::UnsupportedClass(class));
        }
        let ttl = self.read_u32(section)?;
        let rdlen = self.read_u16(section)? as usize;
        if self.remaining() < rdlen {
            return Err(WireError::Truncated(section));
        }
        let rdata_start = self.pos;
        let rdata_end = rdata_start + rdlen;
        let rdata = self.read_rdata(rtype, rdata_start, rdata_end, section)?;
        self.pos = rdata_end;
        let mut rec = ResourceRecord { owner, ttl, rdata };
        adopt_owner(&mut rec);
        Ok(rec)
    }

    fn read_rdata(
        &mut self,
        rtype: RecordType,
        start: usize,
        end: usize,
        section: Section,
    ) -> Result<Rdata, WireError> {
        let mut inner = Cursor {
            buf: &self.buf[..end],
            pos: start,
        };
        let rdata = match rtype {
            RecordType::A => {
                let octets = inner.read_slice(4, section)?;
                Rdata::A(std::net::Ipv4Addr::new(
                    octets[0], octets[1], octets[2], octets[3],
                ))
            }
            RecordType::Ns => {
                // Target may use a pointer back into the message.
                let (target, consumed) = parse_name_at(self.buf, inner.pos, section)?;
                inner.pos += consumed;
                Rdata::Ns(target)
            }
            RecordType::Dnskey => {
                let flags = inner.read_u16(section)?;
                let protocol = inner.read_u8(section)?;
                if protocol != 3 {
                    return Err(WireError::MalformedLabel(section));
                }
                let algorithm = inner.read_u8(section)?;
                let public_key = inner.read_slice(end - inner.pos, section)?.to_vec();
                Rdata::Dnskey(Dnskey {
                    owner: DomainName::root(), // replaced below
                    flags,
                    algorithm,
                    public_key,
                })
            }
            RecordType::Rrsig => {
                let covered_type = RecordType::from_code(inner.read_u16(section)?)?;
                let algorithm = inner.read_u8(section)?;
                let key_tag = inner.read_u16(section)?;
                let inception = inner.read_u64(section)?;
                let expiration = inner.read_u64(section)?;
                let (signer, consumed) = parse_name_at(self.buf, inner.pos, section)?;
                inner.pos += consumed;
                let signature = inner.read_slice(end - inner.pos, section)?.to_vec();
                Rdata::Rrsig(Rrsig {
                    covered_type,
                    algorithm,
                    key_tag,
                    inception,
                    expiration,
                    signer,
                    signature,
                })
            }
            RecordType::Ds => {
                let key_tag = inner.read_u16(section)?;
                let algorithm = inner.read_u8(section)?;
                let digest_type = inner.read_u8(section)?;
                let digest = inner.read_slice(end - inner.pos, section)?.to_vec();
                Rdata::Ds(Ds {
                    owner: DomainName::root(), // replaced below
                    key_tag,
                    algorithm,
                    digest_type,
                    digest,
                })
            }
            RecordType::Opt => {
                let mut options = Vec::new();
                while inner.pos < end {
                    let code = inner.read_u16(section)?;
                    let len = inner.read_u16(section)? as usize;
                    let payload = inner.read_slice(len, section)?.to_vec();
                    options.push(EdnsOption { code, payload });
                }
                Rdata::Opt(options)
            }
        };
        if inner.pos != end {
            return Err(WireError::CountMismatch(section));
        }
        Ok(rdata)
    }
}

/// Parses one name at `offset`, following compression pointers. Returns the
/// name and the bytes consumed at the original position.
fn parse_name_at(
    buf: &[u8],
    offset: usize,
    section: Section,
) -> Result<(DomainName, usize), WireError> {
    let mut labels = Vec::new();
    let mut pos = offset;
    let mut consumed = None;
    let mut jumps = 0usize;
    loop {
        let len = *buf.get(pos).ok_or(WireError::Truncated(section))? as usize;
        if len == 0 {
            let end = pos + 1;
            let consumed = consumed.unwrap_or_else(|| end - offset);
            let name =
                DomainName::from_labels(labels).map_err(|_| WireError::MalformedLabel(section))?;
            return Ok((name, consumed));
        } else if len & 0xC0 == 0xC0 {
            let second = *buf.get(pos + 1).ok_or(WireError::Truncated(section))? as usize;
            let target = ((len & 0x3F) << 8) | second;
            if consumed.is_none() {
                consumed = Some(pos + 2 - offset);
            }
            // Pointers must go strictly backwards; that also bounds the loop.
            if target >= pos {
                return Err(WireError::MalformedLabel(section));
            }
            jumps += 1;
            if jumps > 32 {
                return Err(WireError::MalformedLabel(section));
            }
            pos = target;
        } else if len > super::name::MAX_LABEL_LEN {
            return Err(WireError::MalformedLabel(section));
        } else {
            let start = pos + 1;
            let end = start + len;
            if end > buf.len() {
                return Err(WireError::Truncated(section));
            }
            labels.push(buf[start..end].to_vec());
            pos = end;
        }
    }
}

/// Fixes up owner names inside decoded DNSKEY/DS rdata, which carry their
/// owner for digest computations.
fn adopt_owner(rec: &mut ResourceRecord) {
    match &mut rec.rdata {
        Rdata::Dnskey(key) => key.owner = rec.owner.clone(),
        Rdata::Ds(ds) => ds.owner = rec.owner.clone(),
        _ => {}
    }
}
