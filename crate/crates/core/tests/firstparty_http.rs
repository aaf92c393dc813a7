use std::time::{Duration, Instant};

use r2o_core::codec::{encode_locator_qr, QrConfig};
use r2o_core::firstparty::{serve_firstparty, AlbumId, FirstPartyApi, FirstPartyError, PhotoId};
use r2o_core::store::ContentItem;

fn client() -> reqwest::Client {
    reqwest::Client::builder().no_proxy().build().unwrap()
}

fn qr_png() -> Vec<u8> {
    encode_locator_qr("https://offsite.example/v1/objects/ab12", &QrConfig::default())
        .unwrap()
        .to_png()
}

#[tokio::test]
async fn raw_protocol() {
    let server = serve_firstparty("127.0.0.1:0", Duration::ZERO).await.unwrap();
    let base = server.base_url().to_owned();
    let http = client();

    let resp = http.post(format!("{base}/fp/albums")).body("Vacation").send().await.unwrap();
    assert_eq!(resp.status(), 201);
    let album = resp.text().await.unwrap();

    let png = qr_png();
    let resp = http
        .post(format!("{base}/fp/albums/{album}/photos"))
        .header("content-type", "image/png")
        .header("X-Caption", "r2o%3A1%20caf%C3%A9")
        .body(png.clone())
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 201);
    let body = resp.text().await.unwrap();
    let mut lines = body.lines();
    let photo = lines.next().unwrap().to_owned();
    let static_url = lines.next().unwrap().to_owned();
    assert_eq!(static_url, format!("{base}/fp/photos/{photo}.png"));

    let got = http.get(&static_url).send().await.unwrap();
    assert_eq!(got.status(), 200);
    assert_eq!(got.headers()["content-type"], "image/png");
    assert_eq!(got.bytes().await.unwrap(), png);

    let stored = server.service().photo(&PhotoId(photo.clone())).unwrap();
    assert_eq!(stored.caption, "r2o:1 café");

    let resp = http
        .post(format!("{base}/fp/photos/{photo}/comments"))
        .header("X-Author", "ann")
        .body("original: https://offsite.example/v1/objects/ab12cd")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 201);
    assert_eq!(resp.text().await.unwrap(), "0");

    let page = http.get(format!("{base}/fp/albums/{album}/page")).send().await.unwrap();
    assert_eq!(page.status(), 200);
    assert!(page.headers()["content-type"].to_str().unwrap().starts_with("text/html"));
    let html = page.text().await.unwrap();
    assert!(html.contains("rel=\"preview\" href=\"https://offsite.example/v1/objects/ab12cd\""));
    assert!(html.contains("r2o:1 café"));

    let jpeg = http
        .post(format!("{base}/fp/albums/{album}/photos"))
        .header("content-type", "image/jpeg")
        .body(vec![0xffu8, 0xd8, 0xff, 0xe0])
        .send()
        .await
        .unwrap();
    assert_eq!(jpeg.status(), 415);
    for url in [
        format!("{base}/fp/albums/nope/page"),
        format!("{base}/fp/photos/999.png"),
        format!("{base}/fp/photos/999"),
    ] {
        assert_eq!(http.get(url).send().await.unwrap().status(), 404);
    }
    let resp = http
        .post(format!("{base}/fp/photos/999/comments"))
        .body("x")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 404);
    server.shutdown().await;
}

#[tokio::test]
async fn http_client_matches_in_process_behavior() {
    let server = serve_firstparty("127.0.0.1:0", Duration::ZERO).await.unwrap();
    let fp = server.client();
    let album = fp.create_album("").await.unwrap();
    let up = fp
        .upload_photo(&album, ContentItem::new(qr_png(), "image/png"), "r2o:1\nline two")
        .await
        .unwrap();
    assert_eq!(server.service().photo(&up.photo_id).unwrap().caption, "r2o:1\nline two");
    assert_eq!(fp.add_comment(&up.photo_id, "bob", "nice").await.unwrap(), 0);
    assert_eq!(fp.add_comment(&up.photo_id, "bob", "again").await.unwrap(), 1);
    assert_eq!(
        fp.upload_photo(&AlbumId("missing".into()), ContentItem::new(qr_png(), "image/png"), "")
            .await,
        Err(FirstPartyError::AlbumNotFound)
    );
    assert!(matches!(
        fp.upload_photo(&album, ContentItem::new(vec![1u8, 2], "image/gif"), "").await,
        Err(FirstPartyError::UnsupportedMediaType(_))
    ));
    assert_eq!(
        fp.add_comment(&PhotoId("404".into()), "a", "b").await,
        Err(FirstPartyError::PhotoNotFound)
    );
    server.shutdown().await;
    assert!(matches!(
        fp.create_album("x").await,
        Err(FirstPartyError::Unavailable(_))
    ));
}

#[tokio::test]
async fn photo_delay_applies_to_photos_only() {
    let server = serve_firstparty("127.0.0.1:0", Duration::from_millis(40)).await.unwrap();
    let fp = server.client();
    let album = fp.create_album("t").await.unwrap();
    let up = fp
        .upload_photo(&album, ContentItem::new(qr_png(), "image/png"), "")
        .await
        .unwrap();
    let http = client();
    let start = Instant::now();
    http.get(up.static_url.as_str()).send().await.unwrap().bytes().await.unwrap();
    assert!(start.elapsed() >= Duration::from_millis(40));
    let start = Instant::now();
    http.get(fp.album_page_url(&album)).send().await.unwrap().text().await.unwrap();
    assert!(start.elapsed() < Duration::from_millis(40));
    server.shutdown().await;
}
