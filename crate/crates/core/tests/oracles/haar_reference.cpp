// g++ haar_reference.cpp $(pkg-config --cflags --libs opencv4)
// ./a.out haarcascade_frontalface_default.xml image...
#include <opencv2/objdetect.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <cstdio>
int main(int argc,char**argv){
  cv::CascadeClassifier c(argv[1]);
  for(int i=2;i<argc;i++){
    cv::Mat img=cv::imread(argv[i]); cv::Mat g; cv::cvtColor(img,g,cv::COLOR_BGR2GRAY);
    std::vector<cv::Rect> raw; c.detectMultiScale(g,raw,1.1,0,0,cv::Size(30,30));
    std::vector<cv::Rect> r; c.detectMultiScale(g,r,1.1,5,0,cv::Size(30,30));
    printf("%s raw=%zu grouped=%zu\n",argv[i],raw.size(),r.size());
    for(auto&x:r) printf("  %d %d %d %d\n",x.x,x.y,x.width,x.height);
  }
}
