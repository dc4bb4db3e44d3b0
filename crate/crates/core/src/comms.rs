//! Parametric message channel: unit-disk range, constant latency, Bernoulli
//! loss. Range and loss are evaluated once, at the delivery tick.

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::geom::{dist3, Vec3};
use crate::rng::draw_unit;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub range: f64,
    pub latency: u64,
    pub loss_prob: f64,
    pub max_payload: usize,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            range: 500.0,
            latency: 1,
            loss_prob: 0.0,
            max_payload: 4096,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.range > 0.0 && self.range.is_finite()) {
            return Err(format!("range must be positive, got {}", self.range));
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(format!("loss_prob must be in [0,1], got {}", self.loss_prob));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BroadcastTag {
    #[serde(rename = "broadcast")]
    Broadcast,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Recipients {
    Explicit(Vec<String>),
    Broadcast(BroadcastTag),
}

impl Recipients {
    pub fn broadcast() -> Self {
        Recipients::Broadcast(BroadcastTag::Broadcast)
    }
}

mod b64 {
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(text)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub msg_id: String,
    pub sender: String,
    pub seq: u64,
    pub recipients: Recipients,
    #[serde(with = "b64")]
    pub payload: Vec<u8>,
    pub send_tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    OutOfRange,
    RandomLoss,
    RecipientGone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum MessageStatus {
    Pending,
    Delivered { tick: u64 },
    Dropped { reason: DropReason },
}

/// A message as it lands in a recipient's inbox.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delivered {
    pub msg_id: String,
    pub sender: String,
    pub seq: u64,
    pub send_tick: u64,
    pub delivered_tick: u64,
    #[serde(with = "b64")]
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub msg_id: String,
    pub recipient: String,
    pub status: MessageStatus,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeliveryReport {
    pub outcomes: Vec<Outcome>,
    pub inboxes: BTreeMap<String, Vec<Delivered>>,
}

impl DeliveryReport {
    pub fn delivered(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| matches!(o.status, MessageStatus::Delivered { .. }))
            .count()
    }

    pub fn dropped(&self) -> usize {
        self.outcomes.len() - self.delivered()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CommsError {
    #[error("payload of {size} bytes exceeds max_payload {max}")]
    PayloadTooLarge { size: usize, max: usize },
    #[error("unknown sender `{0}`")]
    UnknownSender(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Channel {
    pub pending: Vec<Message>,
    next_seq: BTreeMap<String, u64>,
    /// Last known position of despawned senders that still have messages in flight.
    last_position: BTreeMap<String, Vec3>,
}

impl Channel {
    pub fn send(
        &mut self,
        params: &ChannelParams,
        tick: u64,
        sender: &str,
        sender_exists: bool,
        recipients: Recipients,
        payload: Vec<u8>,
    ) -> Result<String, CommsError> {
        if !sender_exists {
            return Err(CommsError::UnknownSender(sender.to_string()));
        }
        if payload.len() > params.max_payload {
            return Err(CommsError::PayloadTooLarge {
                size: payload.len(),
                max: params.max_payload,
            });
        }
        let seq = self.next_seq.entry(sender.to_string()).or_insert(0);
        let msg_id = format!("{sender}:{seq}");
        self.pending.push(Message {
            msg_id: msg_id.clone(),
            sender: sender.to_string(),
            seq: *seq,
            recipients,
            payload,
            send_tick: tick,
        });
        *seq += 1;
        Ok(msg_id)
    }

    /// Remember where a sender was when it left the world.
    pub fn note_despawn(&mut self, id: &str, position: Vec3) {
        if self.pending.iter().any(|m| m.sender == id) {
            self.last_position.insert(id.to_string(), position);
        }
    }

    /// Resolve every pending message due at or before `tick`. `positions`
    /// holds the entities able to receive at this tick.
    pub fn deliver(
        &mut self,
        params: &ChannelParams,
        seed: u64,
        tick: u64,
        positions: &BTreeMap<String, Vec3>,
    ) -> DeliveryReport {
        let mut report = DeliveryReport::default();
        let (due, keep): (Vec<Message>, Vec<Message>) = std::mem::take(&mut self.pending)
            .into_iter()
            .partition(|m| m.send_tick + params.latency <= tick);
        self.pending = keep;
        for m in due {
            let due_tick = m.send_tick + params.latency;
            let sender_pos = positions
                .get(&m.sender)
                .or_else(|| self.last_position.get(&m.sender))
                .copied();
            let recipients: Vec<String> = match &m.recipients {
                Recipients::Explicit(ids) => ids.clone(),
                Recipients::Broadcast(_) => positions
                    .keys()
                    .filter(|k| **k != m.sender)
                    .cloned()
                    .collect(),
            };
            for r in recipients {
                let status = match (positions.get(&r), sender_pos) {
                    (None, _) => MessageStatus::Dropped {
                        reason: DropReason::RecipientGone,
                    },
                    (Some(_), None) => MessageStatus::Dropped {
                        reason: DropReason::OutOfRange,
                    },
                    (Some(rp), Some(sp)) if dist3(*rp, sp) > params.range => {
                        MessageStatus::Dropped {
                            reason: DropReason::OutOfRange,
                        }
                    }
                    _ => {
                        let u = draw_unit(seed, "comms", &format!("{}>{}", m.msg_id, r), due_tick);
                        if u < params.loss_prob {
                            MessageStatus::Dropped {
                                reason: DropReason::RandomLoss,
                            }
                        } else {
                            MessageStatus::Delivered { tick: due_tick }
                        }
                    }
                };
                if let MessageStatus::Delivered { tick } = status {
                    report.inboxes.entry(r.clone()).or_default().push(Delivered {
                        msg_id: m.msg_id.clone(),
                        sender: m.sender.clone(),
                        seq: m.seq,
                        send_tick: m.send_tick,
                        delivered_tick: tick,
                        payload: m.payload.clone(),
                    });
                }
                report.outcomes.push(Outcome {
                    msg_id: m.msg_id.clone(),
                    recipient: r,
                    status,
                });
            }
        }
        for inbox in report.inboxes.values_mut() {
            inbox.sort_by(|a, b| {
                (a.send_tick, &a.sender, a.seq).cmp(&(b.send_tick, &b.sender, b.seq))
            });
        }
        let live: std::collections::BTreeSet<&String> =
            self.pending.iter().map(|m| &m.sender).collect();
        self.last_position.retain(|k, _| live.contains(k));
        report
    }
}

/// Base64 helper for wire payloads.
pub fn encode_payload(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn decode_payload(text: &str) -> Result<Vec<u8>, String> {
    base64::engine::general_purpose::STANDARD
        .decode(text)
        .map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn positions(pairs: &[(&str, Vec3)]) -> BTreeMap<String, Vec3> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn payload_boundary() {
        let p = ChannelParams {
            max_payload: 8,
            ..Default::default()
        };
        let mut ch = Channel::default();
        assert!(ch
            .send(&p, 0, "a", true, Recipients::broadcast(), vec![0; 8])
            .is_ok());
        assert_eq!(
            ch.send(&p, 0, "a", true, Recipients::broadcast(), vec![0; 9]),
            Err(CommsError::PayloadTooLarge { size: 9, max: 8 })
        );
        assert_eq!(
            ch.send(&p, 0, "x", false, Recipients::broadcast(), vec![]),
            Err(CommsError::UnknownSender("x".into()))
        );
    }

    #[test]
    fn latency_two_delivers_at_seven() {
        let p = ChannelParams {
            latency: 2,
            ..Default::default()
        };
        let pos = positions(&[("a", [0.0; 3]), ("b", [10.0, 0.0, 0.0])]);
        let mut ch = Channel::default();
        ch.send(&p, 5, "a", true, Recipients::Explicit(vec!["b".into()]), b"hi".to_vec())
            .unwrap();
        assert!(ch.deliver(&p, 1, 6, &pos).outcomes.is_empty());
        let r = ch.deliver(&p, 1, 7, &pos);
        assert_eq!(r.outcomes[0].status, MessageStatus::Delivered { tick: 7 });
        assert_eq!(r.inboxes["b"][0].payload, b"hi");
        assert!(ch.pending.is_empty());
    }

    #[test]
    fn full_loss_and_range_and_gone() {
        let p = ChannelParams {
            loss_prob: 1.0,
            range: 50.0,
            latency: 0,
            ..Default::default()
        };
        let pos = positions(&[("a", [0.0; 3]), ("b", [10.0, 0.0, 0.0]), ("far", [100.0, 0.0, 0.0])]);
        let mut ch = Channel::default();
        ch.send(
            &p,
            0,
            "a",
            true,
            Recipients::Explicit(vec!["b".into(), "far".into(), "ghost".into()]),
            vec![],
        )
        .unwrap();
        let r = ch.deliver(&p, 1, 0, &pos);
        let st: Vec<_> = r.outcomes.iter().map(|o| o.status).collect();
        assert_eq!(
            st,
            vec![
                MessageStatus::Dropped {
                    reason: DropReason::RandomLoss
                },
                MessageStatus::Dropped {
                    reason: DropReason::OutOfRange
                },
                MessageStatus::Dropped {
                    reason: DropReason::RecipientGone
                },
            ]
        );
    }

    #[test]
    fn same_tick_sends_are_fifo_with_distinct_seq() {
        let p = ChannelParams::default();
        let pos = positions(&[("a", [0.0; 3]), ("b", [1.0, 0.0, 0.0])]);
        let mut ch = Channel::default();
        let m0 = ch
            .send(&p, 3, "a", true, Recipients::Explicit(vec!["b".into()]), b"0".to_vec())
            .unwrap();
        let m1 = ch
            .send(&p, 3, "a", true, Recipients::Explicit(vec!["b".into()]), b"1".to_vec())
            .unwrap();
        assert_ne!(m0, m1);
        let r = ch.deliver(&p, 0, 4, &pos);
        let inbox = &r.inboxes["b"];
        assert_eq!(inbox.iter().map(|d| d.seq).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(inbox[0].msg_id, m0);
    }

    #[test]
    fn despawned_sender_uses_last_position() {
        let p = ChannelParams {
            range: 20.0,
            ..Default::default()
        };
        let mut ch = Channel::default();
        ch.send(&p, 0, "a", true, Recipients::Explicit(vec!["b".into()]), vec![])
            .unwrap();
        ch.note_despawn("a", [100.0, 0.0, 0.0]);
        let pos = positions(&[("b", [0.0; 3])]);
        let r = ch.deliver(&p, 0, 1, &pos);
        assert_eq!(
            r.outcomes[0].status,
            MessageStatus::Dropped {
                reason: DropReason::OutOfRange
            }
        );
    }

    #[test]
    fn recipients_wire_form() {
        let b: Recipients = serde_json::from_str("\"broadcast\"").unwrap();
        assert_eq!(b, Recipients::broadcast());
        let e: Recipients = serde_json::from_str("[\"x\"]").unwrap();
        assert_eq!(e, Recipients::Explicit(vec!["x".into()]));
    }
}
