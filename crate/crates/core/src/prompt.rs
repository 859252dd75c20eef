//! Chat prompts with numbered components and a byte-stable text form.
//!
//! The text form produced by [`PromptBundle::serialize`] is what golden
//! files pin and what mock fixtures are keyed by (through its SHA-256).

use std::fmt::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

/// Binary payload sent alongside a message, e.g. a PNG screenshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attachment {
    pub name: String,
    pub mime: String,
    pub data: Vec<u8>,
}

impl Attachment {
    pub fn png(name: impl Into<String>, data: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            mime: "image/png".into(),
            data,
        }
    }

    pub fn data_url(&self) -> String {
        use base64::Engine;
        format!(
            "data:{};base64,{}",
            self.mime,
            base64::engine::general_purpose::STANDARD.encode(&self.data)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub role: Role,
    pub text: String,
    pub attachments: Vec<Attachment>,
}

impl Message {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
            attachments: Vec::new(),
        }
    }
}

/// Where a numbered prompt component lives in the message list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Component {
    pub id: u8,
    pub name: &'static str,
    pub message: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PromptBundle {
    pub messages: Vec<Message>,
    pub components: Vec<Component>,
}

impl PromptBundle {
    /// Appends a component as its own message.
    pub fn push_component(&mut self, id: u8, name: &'static str, message: Message) {
        self.components.push(Component {
            id,
            name,
            message: self.messages.len(),
        });
        self.messages.push(message);
    }

    pub fn component_ids(&self) -> Vec<u8> {
        self.components.iter().map(|c| c.id).collect()
    }

    pub fn component_text(&self, id: u8) -> Option<&str> {
        self.components
            .iter()
            .find(|c| c.id == id)
            .map(|c| self.messages[c.message].text.as_str())
    }

    /// Copy of the prompt extended by a model reply and a follow-up request,
    /// used for repair rounds.
    pub fn with_followup(&self, reply: &str, request: &str) -> Self {
        let mut next = self.clone();
        next.messages.push(Message::new(Role::Assistant, reply));
        next.messages.push(Message::new(Role::User, request));
        next
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (i, m) in self.messages.iter().enumerate() {
            let _ = write!(out, "=== message {} | {}", i + 1, m.role.as_str());
            if let Some(c) = self.components.iter().find(|c| c.message == i) {
                let _ = write!(out, " | component {}: {}", c.id, c.name);
            }
            out.push_str(" ===\n");
            out.push_str(&m.text);
            if !m.text.ends_with('\n') {
                out.push('\n');
            }
            for a in &m.attachments {
                let _ = writeln!(
                    out,
                    "--- attachment {} ({}, {} bytes, sha256 {}) ---",
                    a.name,
                    a.mime,
                    a.data.len(),
                    hex::encode(Sha256::digest(&a.data))
                );
            }
        }
        out
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.serialize().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serialization_is_stable_and_hash_sensitive() {
        let mut p = PromptBundle::default();
        p.push_component(1, "Role", Message::new(Role::System, "be terse"));
        let mut m = Message::new(Role::User, "look");
        m.attachments.push(Attachment::png("shot", vec![1, 2, 3]));
        p.push_component(2, "Input", m);
        let text = p.serialize();
        assert!(text.starts_with("=== message 1 | system | component 1: Role ===\nbe terse\n"));
        assert!(text.contains("--- attachment shot (image/png, 3 bytes, sha256 039058c6"));
        assert_eq!(p.sha256(), p.clone().sha256());
        let followed = p.with_followup("x", "again");
        assert_ne!(followed.sha256(), p.sha256());
        assert!(followed.serialize().contains("=== message 3 | assistant ===\nx\n"));
    }

    #[test]
    fn data_url() {
        assert_eq!(
            Attachment::png("a", b"hi".to_vec()).data_url(),
            "data:image/png;base64,aGk="
        );
    }
}
